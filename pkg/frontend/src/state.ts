// Dashboard state: one store fed by the API and the event stream.
//
// The store never re-derives alert state from readings -- a tile turns
// alerting only because the server said so via an alert event. Displayed
// numbers are always traceable to an API response or stream event.

import type {
  Alert,
  ConnectionStatus,
  MetricName,
  Patient,
  Reading,
} from './types.js';

export type TileStatus = 'normal' | 'alerting';

export interface SeriesSample {
  t: number; // epoch millis
  v: number;
}

const LIVE_BUFFER_LIMIT = 10_000;

export type StoreListener = (change: string) => void;

export class DashboardStore {
  patients = new Map<number, Patient>();
  latest = new Map<number, Partial<Record<MetricName, Reading>>>();
  alerts = new Map<string, Alert>();
  connection: ConnectionStatus = 'connecting';
  lastStreamId = 0;
  duplicateEvents = 0;

  private buffers = new Map<string, SeriesSample[]>();
  private listeners: StoreListener[] = [];

  subscribe(listener: StoreListener): () => void {
    this.listeners.push(listener);
    return () => {
      this.listeners = this.listeners.filter((l) => l !== listener);
    };
  }

  private emit(change: string): void {
    for (const listener of [...this.listeners]) listener(change);
  }

  setPatients(patients: Patient[]): void {
    this.patients = new Map(patients.map((p) => [p.patient_id, p]));
    this.emit('patients');
  }

  setPatient(patient: Patient): void {
    this.patients.set(patient.patient_id, patient);
    this.emit('patients');
  }

  setAlerts(alerts: Alert[]): void {
    for (const alert of alerts) this.alerts.set(alert.alert_id, alert);
    this.emit('alerts');
  }

  setConnection(status: ConnectionStatus): void {
    if (this.connection !== status) {
      this.connection = status;
      this.emit('connection');
    }
  }

  /** Apply one stream event; returns false for duplicates/stale replays. */
  applyEvent(id: number, type: string, data: unknown): boolean {
    if (id > 0 && id <= this.lastStreamId) {
      this.duplicateEvents += 1;
      return false;
    }
    if (id > 0) this.lastStreamId = id;
    if (type === 'reading') {
      this.applyReading(data as Reading);
      return true;
    }
    if (type === 'alert') {
      this.alerts.set((data as Alert).alert_id, data as Alert);
      this.emit('alerts');
      return true;
    }
    return false;
  }

  private applyReading(reading: Reading): void {
    const perPatient = this.latest.get(reading.patient_id) ?? {};
    perPatient[reading.metric] = reading;
    this.latest.set(reading.patient_id, perPatient);
    const key = `${reading.patient_id}:${reading.metric}`;
    let buffer = this.buffers.get(key);
    if (!buffer) {
      buffer = [];
      this.buffers.set(key, buffer);
    }
    buffer.push({ t: Date.parse(reading.timestamp), v: reading.value });
    if (buffer.length > LIVE_BUFFER_LIMIT) buffer.splice(0, buffer.length - LIVE_BUFFER_LIMIT);
    this.emit('reading');
  }

  seriesBuffer(patientId: number, metric: MetricName): SeriesSample[] {
    return this.buffers.get(`${patientId}:${metric}`) ?? [];
  }

  latestReading(patientId: number, metric: MetricName): Reading | undefined {
    return this.latest.get(patientId)?.[metric];
  }

  /** Alerting while any alert for the patient is not resolved. */
  tileStatus(patientId: number): TileStatus {
    for (const alert of this.alerts.values()) {
      if (alert.patient_id === patientId && alert.state !== 'resolved') return 'alerting';
    }
    return 'normal';
  }

  /** Alerts awaiting attention, oldest first. */
  activeAlerts(): Alert[] {
    return [...this.alerts.values()]
      .filter((a) => a.state === 'open' || a.state === 'notified')
      .sort((a, b) => a.created_at.localeCompare(b.created_at));
  }

  /** Acknowledged and resolved alerts, newest first. */
  alertHistory(): Alert[] {
    return [...this.alerts.values()]
      .filter((a) => a.state === 'acknowledged' || a.state === 'resolved')
      .sort((a, b) => b.created_at.localeCompare(a.created_at));
  }
}
