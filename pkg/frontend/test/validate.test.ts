import { describe, expect, it } from 'vitest';

import { validateThresholds } from '../src/validate.js';

describe('validateThresholds', () => {
  it('accepts a plain low/high pair', () => {
    const result = validateThresholds({ low: '36', high: '38' });
    expect(result).toEqual({ ok: true, value: { low: 36, high: 38 } });
  });

  it('rejects low >= high, naming low (mirrors the server 422)', () => {
    const result = validateThresholds({ low: '38', high: '36' });
    expect(result).toMatchObject({ ok: false, field: 'low' });
  });

  it('rejects non-numeric input before any network call', () => {
    expect(validateThresholds({ low: 'warm', high: '38' })).toMatchObject({
      ok: false,
      field: 'low',
    });
    expect(validateThresholds({ low: '36', high: '' })).toMatchObject({
      ok: false,
      field: 'high',
    });
  });

  it('validates optional debounce and resolve_after', () => {
    expect(
      validateThresholds({ low: '36', high: '38', debounce_window_s: '-1' }),
    ).toMatchObject({ ok: false, field: 'debounce_window_s' });
    expect(
      validateThresholds({ low: '36', high: '38', resolve_after: '2.5' }),
    ).toMatchObject({ ok: false, field: 'resolve_after' });
    expect(
      validateThresholds({ low: '36', high: '38', debounce_window_s: '120', resolve_after: '2' }),
    ).toEqual({ ok: true, value: { low: 36, high: 38, debounce_window_s: 120, resolve_after: 2 } });
  });
});
