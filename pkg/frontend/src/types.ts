// API wire types, mirroring the gateway's JSON bodies (see docs/API.md).

export type MetricName = 'temperature' | 'heart_rate' | 'ecg';

export interface Reading {
  patient_id: number;
  metric: MetricName;
  value: number;
  unit: string;
  timestamp: string;
  sequence: number;
  source_addr64: string;
}

export interface ThresholdSpec {
  low: number;
  high: number;
  debounce_window_s: number;
  resolve_after: number;
}

export interface Patient {
  patient_id: number;
  display_name: string;
  doctor_phone: string;
  thresholds: Partial<Record<MetricName, ThresholdSpec>>;
}

export type AlertStateName = 'open' | 'notified' | 'acknowledged' | 'resolved';

export interface SmsStatus {
  state: 'pending' | 'sent' | 'failed';
  attempts: number;
  reference: number | null;
}

export interface Alert {
  alert_id: string;
  patient_id: number;
  metric: MetricName;
  observed_value: number;
  breached_bound: 'low' | 'high';
  breached_limit: number;
  state: AlertStateName;
  created_at: string;
  sms_status: SmsStatus;
  acknowledged_by: string | null;
  acknowledged_at: string | null;
  resolved_at: string | null;
  previous_state?: string | null;
}

export interface SeriesPoint {
  timestamp: string;
  value: number;
}

export interface Series {
  patient_id: number;
  metric: MetricName;
  points: SeriesPoint[];
}

export type StreamEventType = 'reading' | 'alert';

export interface StreamEvent {
  id: number;
  type: StreamEventType;
  data: Reading | Alert;
}

export type ConnectionStatus = 'connecting' | 'live' | 'stale';
