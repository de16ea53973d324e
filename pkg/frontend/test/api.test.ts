import { afterEach, describe, expect, it } from 'vitest';
import { createServer, type Server } from 'node:http';
import { AddressInfo } from 'node:net';

import { ApiClient, ApiRequestError } from '../src/api.js';

let server: Server;

function fakeApi(routes: Record<string, { status: number; body: unknown }>): Promise<string> {
  server = createServer((req, res) => {
    const key = `${req.method} ${req.url?.split('?')[0]}`;
    const route = routes[key];
    if (!route) {
      res.writeHead(404, { 'Content-Type': 'application/json' });
      res.end(JSON.stringify({ code: 'not_found', message: key }));
      return;
    }
    res.writeHead(route.status, { 'Content-Type': 'application/json' });
    res.end(JSON.stringify(route.body));
  });
  return new Promise((resolve) =>
    server.listen(0, '127.0.0.1', () => {
      const { port } = server.address() as AddressInfo;
      resolve(`http://127.0.0.1:${port}`);
    }),
  );
}

afterEach(() => new Promise<void>((resolve) => server.close(() => resolve())));

describe('ApiClient', () => {
  it('fetches patients', async () => {
    const base = await fakeApi({
      'GET /api/patients': {
        status: 200,
        body: { patients: [{ patient_id: 1, display_name: 'P001', doctor_phone: '+1555', thresholds: {} }] },
      },
    });
    const patients = await new ApiClient(base).patients();
    expect(patients).toHaveLength(1);
    expect(patients[0].display_name).toBe('P001');
  });

  it('surfaces 422 validation errors with code and message', async () => {
    const base = await fakeApi({
      'PUT /api/patients/1/thresholds': {
        status: 422,
        body: { code: 'validation', message: 'low must be below high, got low=38.0 high=36.0' },
      },
    });
    const error = await new ApiClient(base)
      .putThresholds(1, 'temperature', { low: 38, high: 36 })
      .catch((e: unknown) => e);
    expect(error).toBeInstanceOf(ApiRequestError);
    expect((error as ApiRequestError).status).toBe(422);
    expect((error as ApiRequestError).message).toContain('low');
  });

  it('surfaces 409 conflicts from double acks', async () => {
    const base = await fakeApi({
      'POST /api/alerts/abc/ack': {
        status: 409,
        body: { code: 'illegal_transition', message: 'illegal alert transition acknowledged -> acknowledged' },
      },
    });
    const error = await new ApiClient(base)
      .acknowledgeAlert('abc', 'tester')
      .catch((e: unknown) => e);
    expect((error as ApiRequestError).status).toBe(409);
    expect((error as ApiRequestError).code).toBe('illegal_transition');
  });

  it('builds series query parameters', async () => {
    let captured = '';
    server = createServer((req, res) => {
      captured = req.url ?? '';
      res.writeHead(200, { 'Content-Type': 'application/json' });
      res.end(JSON.stringify({ patient_id: 1, metric: 'temperature', points: [] }));
    });
    const base = await new Promise<string>((resolve) =>
      server.listen(0, '127.0.0.1', () => {
        const { port } = server.address() as AddressInfo;
        resolve(`http://127.0.0.1:${port}`);
      }),
    );
    await new ApiClient(base).series(1, 'temperature', 'A', 'B', 500);
    expect(captured).toBe('/api/patients/1/series?metric=temperature&from=A&to=B&max_points=500');
  });
});
