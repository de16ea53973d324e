// Thin typed wrapper over the gateway's REST endpoints.

import type { Alert, MetricName, Patient, Series, ThresholdSpec } from './types.js';

export class ApiRequestError extends Error {
  constructor(
    readonly status: number,
    readonly code: string,
    message: string,
  ) {
    super(message);
  }
}

async function parseError(response: Response): Promise<ApiRequestError> {
  let code = 'error';
  let message = `HTTP ${response.status}`;
  try {
    const body = (await response.json()) as { code?: string; message?: string };
    if (body.code) code = body.code;
    if (body.message) message = body.message;
  } catch {
    // non-JSON error body; keep the fallback
  }
  return new ApiRequestError(response.status, code, message);
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string = '',
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const response = await this.fetchFn(this.baseUrl + path, init);
    if (!response.ok) throw await parseError(response);
    return (await response.json()) as T;
  }

  async patients(): Promise<Patient[]> {
    const body = await this.request<{ patients: Patient[] }>('/api/patients');
    return body.patients;
  }

  async latest(patientId: number): Promise<Record<string, unknown>> {
    return this.request(`/api/patients/${patientId}/latest`);
  }

  async series(
    patientId: number,
    metric: MetricName,
    fromIso: string,
    toIso: string,
    maxPoints?: number,
  ): Promise<Series> {
    const params = new URLSearchParams({ metric, from: fromIso, to: toIso });
    if (maxPoints !== undefined) params.set('max_points', String(maxPoints));
    return this.request(`/api/patients/${patientId}/series?${params.toString()}`);
  }

  async putThresholds(
    patientId: number,
    metric: MetricName,
    spec: Partial<ThresholdSpec>,
  ): Promise<Patient> {
    return this.request(`/api/patients/${patientId}/thresholds`, {
      method: 'PUT',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ [metric]: spec }),
    });
  }

  async alerts(state?: string): Promise<Alert[]> {
    const suffix = state ? `?state=${encodeURIComponent(state)}` : '';
    const body = await this.request<{ alerts: Alert[] }>(`/api/alerts${suffix}`);
    return body.alerts;
  }

  async acknowledgeAlert(alertId: string, operator: string): Promise<Alert> {
    return this.request(`/api/alerts/${alertId}/ack`, {
      method: 'POST',
      headers: { 'Content-Type': 'application/json' },
      body: JSON.stringify({ operator }),
    });
  }
}
