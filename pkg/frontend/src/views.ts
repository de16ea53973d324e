// DOM rendering. Views are redraw functions over the store; all state lives
// in DashboardStore and every number shown comes from an API response or a
// stream event.

import { ApiClient, ApiRequestError } from './api.js';
import { LineChart } from './chart.js';
import { CHART_WINDOWS, METRIC_LABEL, formatAge, formatClock, formatReading, formatValue } from './format.js';
import type { DashboardStore } from './state.js';
import type { Alert, MetricName, Patient } from './types.js';
import { validateThresholds } from './validate.js';

function el<K extends keyof HTMLElementTagNameMap>(
  tag: K,
  className?: string,
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = document.createElement(tag);
  if (className) node.className = className;
  if (text !== undefined) node.textContent = text;
  return node;
}

export function renderConnectionBanner(store: DashboardStore, root: HTMLElement): void {
  root.textContent = '';
  const banner = el('div', `conn conn-${store.connection}`);
  banner.textContent =
    store.connection === 'live'
      ? 'live'
      : store.connection === 'stale'
        ? 'STALE DATA - reconnecting'
        : 'connecting';
  root.appendChild(banner);
}

export function renderOverview(
  store: DashboardStore,
  root: HTMLElement,
  onSelect: (patientId: number) => void,
): void {
  root.textContent = '';
  const grid = el('div', 'tile-grid');
  for (const patient of [...store.patients.values()].sort((a, b) => a.patient_id - b.patient_id)) {
    const status = store.tileStatus(patient.patient_id);
    const tile = el('div', `tile tile-${status}`);
    tile.dataset.patientId = String(patient.patient_id);
    tile.appendChild(el('h3', 'tile-name', patient.display_name));
    const temp = store.latestReading(patient.patient_id, 'temperature');
    const hr = store.latestReading(patient.patient_id, 'heart_rate');
    tile.appendChild(
      el('div', 'tile-temp', temp ? formatReading(temp) : 'no temperature yet'),
    );
    tile.appendChild(el('div', 'tile-hr', hr ? `${formatReading(hr)}` : 'no heart rate yet'));
    if (temp) tile.appendChild(el('div', 'tile-age', formatAge(temp.timestamp)));
    tile.addEventListener('click', () => onSelect(patient.patient_id));
    grid.appendChild(tile);
  }
  root.appendChild(grid);
}

export interface DetailState {
  patientId: number;
  windowSeconds: number;
  showBpmChart: boolean;
}

export function renderDetail(
  store: DashboardStore,
  api: ApiClient,
  root: HTMLElement,
  state: DetailState,
  onBack: () => void,
): void {
  root.textContent = '';
  const patient = store.patients.get(state.patientId);
  if (!patient) {
    root.appendChild(el('p', 'error', `unknown patient ${state.patientId}`));
    return;
  }
  const header = el('div', 'detail-header');
  const back = el('button', 'back', '< overview');
  back.addEventListener('click', onBack);
  header.appendChild(back);
  header.appendChild(el('h2', undefined, patient.display_name));
  const hr = store.latestReading(patient.patient_id, 'heart_rate');
  // BPM is a numeric readout by default; the chart below is opt-in.
  header.appendChild(el('div', 'bpm-readout', hr ? formatReading(hr) : 'no heart rate yet'));
  root.appendChild(header);

  const windowBar = el('div', 'window-bar');
  for (const window of CHART_WINDOWS) {
    const button = el('button', window.seconds === state.windowSeconds ? 'active' : '', window.label);
    button.addEventListener('click', () => {
      state.windowSeconds = window.seconds;
      renderDetail(store, api, root, state, onBack);
    });
    windowBar.appendChild(button);
  }
  const bpmToggle = el('button', state.showBpmChart ? 'active' : '', 'BPM chart');
  bpmToggle.addEventListener('click', () => {
    state.showBpmChart = !state.showBpmChart;
    renderDetail(store, api, root, state, onBack);
  });
  windowBar.appendChild(bpmToggle);
  root.appendChild(windowBar);

  const metrics: MetricName[] = state.showBpmChart
    ? ['temperature', 'heart_rate']
    : ['temperature'];
  for (const metric of metrics) {
    const section = el('div', 'chart-section');
    section.appendChild(el('h4', undefined, `${METRIC_LABEL[metric]} over the last ${label(state.windowSeconds)}`));
    const canvas = el('canvas', 'series-canvas');
    section.appendChild(canvas);
    root.appendChild(section);
    drawSeries(store, api, canvas, patient, metric, state.windowSeconds);
  }

  root.appendChild(renderThresholdEditor(store, api, patient));
}

function label(seconds: number): string {
  return CHART_WINDOWS.find((w) => w.seconds === seconds)?.label ?? `${seconds}s`;
}

function drawSeries(
  store: DashboardStore,
  api: ApiClient,
  canvas: HTMLCanvasElement,
  patient: Patient,
  metric: MetricName,
  windowSeconds: number,
): void {
  const thresholds = patient.thresholds[metric] ?? null;
  const chart = new LineChart(canvas, {
    width: 760,
    height: 220,
    thresholds: thresholds ? { low: thresholds.low, high: thresholds.high } : null,
    unit: metric === 'temperature' ? 'C' : '',
  });
  const to = new Date();
  const from = new Date(to.getTime() - windowSeconds * 1000);
  api
    .series(patient.patient_id, metric, from.toISOString(), to.toISOString(), 2000)
    .then((series) => {
      chart.draw(series.points.map((p) => ({ t: Date.parse(p.timestamp), v: p.value })));
    })
    .catch(() => {
      chart.draw(store.seriesBuffer(patient.patient_id, metric));
    });
}

export function renderThresholdEditor(
  store: DashboardStore,
  api: ApiClient,
  patient: Patient,
): HTMLElement {
  const box = el('div', 'threshold-editor');
  box.appendChild(el('h4', undefined, 'Thresholds'));
  const form = el('form');
  const error = el('div', 'inline-error');
  const metricSelect = el('select');
  for (const metric of ['temperature', 'heart_rate'] as MetricName[]) {
    const option = el('option', undefined, METRIC_LABEL[metric]);
    option.value = metric;
    metricSelect.appendChild(option);
  }
  const lowInput = el('input');
  const highInput = el('input');
  lowInput.name = 'low';
  highInput.name = 'high';
  const fill = () => {
    const current = patient.thresholds[metricSelect.value as MetricName];
    lowInput.value = current ? String(current.low) : '';
    highInput.value = current ? String(current.high) : '';
  };
  fill();
  metricSelect.addEventListener('change', fill);
  const save = el('button', undefined, 'Save');
  form.append(metricSelect, el('label', undefined, 'low'), lowInput, el('label', undefined, 'high'), highInput, save, error);
  form.addEventListener('submit', (event) => {
    event.preventDefault();
    error.textContent = '';
    const checked = validateThresholds({ low: lowInput.value, high: highInput.value });
    if (!checked.ok) {
      // client-side mirror of the server rule: no network call happens
      error.textContent = `${checked.field}: ${checked.message}`;
      return;
    }
    api
      .putThresholds(patient.patient_id, metricSelect.value as MetricName, checked.value)
      .then((updated) => {
        store.setPatient(updated);
        error.textContent = 'saved';
      })
      .catch((err: unknown) => {
        error.textContent = err instanceof ApiRequestError ? err.message : String(err);
      });
  });
  box.appendChild(form);
  return box;
}

export function renderAlertPanel(
  store: DashboardStore,
  api: ApiClient,
  root: HTMLElement,
): void {
  root.textContent = '';
  root.appendChild(el('h4', undefined, 'Alerts'));
  const active = store.activeAlerts();
  if (active.length === 0) root.appendChild(el('p', 'quiet', 'no active alerts'));
  for (const alert of active) root.appendChild(alertRow(store, api, alert, true));
  const history = store.alertHistory();
  if (history.length > 0) {
    root.appendChild(el('h5', undefined, 'History'));
    for (const alert of history.slice(0, 50)) root.appendChild(alertRow(store, api, alert, false));
  }
}

function alertRow(store: DashboardStore, api: ApiClient, alert: Alert, active: boolean): HTMLElement {
  const row = el('div', `alert-row alert-${alert.state}`);
  const patient = store.patients.get(alert.patient_id);
  row.appendChild(
    el(
      'span',
      'alert-text',
      `${patient?.display_name ?? alert.patient_id} ${METRIC_LABEL[alert.metric]} ` +
        `${formatValue(alert.metric, alert.observed_value, alert.metric === 'temperature' ? 'C' : 'BPM')} ` +
        `${alert.breached_bound.toUpperCase()} at ${formatClock(alert.created_at)} [${alert.state}]`,
    ),
  );
  if (active) {
    const ack = el('button', 'ack', 'Acknowledge');
    ack.addEventListener('click', () => {
      api
        .acknowledgeAlert(alert.alert_id, 'dashboard')
        .then((updated) => store.setAlerts([updated]))
        .catch(async (err: unknown) => {
          // a 409 means the server moved first; refresh and let the list settle
          row.appendChild(el('span', 'inline-error', err instanceof ApiRequestError ? ` ${err.message}` : ' failed'));
          const fresh = await api.alerts();
          store.setAlerts(fresh);
        });
    });
    row.appendChild(ack);
  }
  return row;
}
