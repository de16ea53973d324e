// Client-side threshold validation, mirroring the server's rules so a bad
// form never reaches the network. The server remains the authority; its 422
// messages are surfaced inline when they do occur.

import type { ThresholdSpec } from './types.js';

export interface ThresholdFormValues {
  low: string;
  high: string;
  debounce_window_s?: string;
  resolve_after?: string;
}

export type ValidationResult =
  | { ok: true; value: Partial<ThresholdSpec> }
  | { ok: false; field: string; message: string };

function num(raw: string | undefined): number | undefined {
  if (raw === undefined || raw.trim() === '') return undefined;
  const value = Number(raw);
  return Number.isFinite(value) ? value : NaN;
}

export function validateThresholds(values: ThresholdFormValues): ValidationResult {
  const low = num(values.low);
  const high = num(values.high);
  if (low === undefined || Number.isNaN(low)) {
    return { ok: false, field: 'low', message: 'low must be a number' };
  }
  if (high === undefined || Number.isNaN(high)) {
    return { ok: false, field: 'high', message: 'high must be a number' };
  }
  if (!(low < high)) {
    return { ok: false, field: 'low', message: 'low must be below high' };
  }
  const result: Partial<ThresholdSpec> = { low, high };
  const debounce = num(values.debounce_window_s);
  if (debounce !== undefined) {
    if (Number.isNaN(debounce) || debounce < 0) {
      return { ok: false, field: 'debounce_window_s', message: 'debounce must be >= 0 seconds' };
    }
    result.debounce_window_s = debounce;
  }
  const resolveAfter = num(values.resolve_after);
  if (resolveAfter !== undefined) {
    if (Number.isNaN(resolveAfter) || !Number.isInteger(resolveAfter) || resolveAfter < 1) {
      return { ok: false, field: 'resolve_after', message: 'resolve_after must be an integer >= 1' };
    }
    result.resolve_after = resolveAfter;
  }
  return { ok: true, value: result };
}
