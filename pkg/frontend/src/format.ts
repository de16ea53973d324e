// Display formatting only; no unit conversion or clinical math happens here.

import type { MetricName, Reading } from './types.js';

export const METRIC_LABEL: Record<MetricName, string> = {
  temperature: 'Temperature',
  heart_rate: 'Heart rate',
  ecg: 'ECG',
};

const METRIC_DECIMALS: Record<MetricName, number> = {
  temperature: 1,
  heart_rate: 0,
  ecg: 3,
};

export function formatValue(metric: MetricName, value: number, unit: string): string {
  return `${value.toFixed(METRIC_DECIMALS[metric])} ${unit}`;
}

export function formatReading(reading: Reading): string {
  return formatValue(reading.metric, reading.value, reading.unit);
}

export function formatClock(iso: string): string {
  const date = new Date(iso);
  return Number.isNaN(date.getTime()) ? iso : date.toISOString().slice(11, 19) + 'Z';
}

export function formatAge(iso: string, nowMs: number = Date.now()): string {
  const ms = nowMs - Date.parse(iso);
  if (!Number.isFinite(ms) || ms < 0) return '';
  const s = Math.floor(ms / 1000);
  if (s < 60) return `${s}s ago`;
  if (s < 3600) return `${Math.floor(s / 60)}m ago`;
  return `${Math.floor(s / 3600)}h ago`;
}

export interface ChartWindow {
  label: string;
  seconds: number;
}

export const CHART_WINDOWS: ChartWindow[] = [
  { label: '5 min', seconds: 300 },
  { label: '1 h', seconds: 3600 },
  { label: '24 h', seconds: 86_400 },
];
