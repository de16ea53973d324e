// Bootstrap: load the registry and alert backlog, subscribe to the stream,
// and keep the three views in sync with the store.

import { ApiClient } from './api.js';
import { SseClient } from './sse.js';
import { DashboardStore } from './state.js';
import type { Alert, Reading } from './types.js';
import {
  DetailState,
  renderAlertPanel,
  renderConnectionBanner,
  renderDetail,
  renderOverview,
} from './views.js';

export function startApp(root: HTMLElement, baseUrl = ''): { store: DashboardStore; stream: SseClient } {
  const api = new ApiClient(baseUrl);
  const store = new DashboardStore();

  const bannerHost = document.createElement('div');
  const mainHost = document.createElement('div');
  const alertHost = document.createElement('div');
  alertHost.className = 'alert-panel';
  root.append(bannerHost, mainHost, alertHost);

  let detail: DetailState | null = null;

  const redraw = () => {
    renderConnectionBanner(store, bannerHost);
    if (detail) {
      renderDetail(store, api, mainHost, detail, () => {
        detail = null;
        redraw();
      });
    } else {
      renderOverview(store, mainHost, (patientId) => {
        detail = { patientId, windowSeconds: 300, showBpmChart: false };
        redraw();
      });
    }
    renderAlertPanel(store, api, alertHost);
  };

  // Reading bursts arrive at node rate; the overview redraws per event, but
  // the detail view (which re-fetches its chart series) is throttled so the
  // BPM readout stays live without hammering the API.
  let detailRedrawDue = 0;
  let detailTimer: ReturnType<typeof setTimeout> | null = null;
  store.subscribe((change) => {
    if (change === 'reading' && detail) {
      const now = Date.now();
      if (now >= detailRedrawDue) {
        detailRedrawDue = now + 1000;
        redraw();
      } else if (!detailTimer) {
        detailTimer = setTimeout(() => {
          detailTimer = null;
          detailRedrawDue = Date.now() + 1000;
          redraw();
        }, detailRedrawDue - now);
      }
      return;
    }
    redraw();
  });

  void api.patients().then((patients) => store.setPatients(patients));
  void api.alerts().then((alerts) => store.setAlerts(alerts));

  const stream = new SseClient({
    url: `${baseUrl}/api/stream`,
    onEvent: (id, type, data) => {
      if (type === 'reading') store.applyEvent(id, type, data as Reading);
      else if (type === 'alert') store.applyEvent(id, type, data as Alert);
    },
    onStatus: (status) => store.setConnection(status),
  });
  stream.connect();
  redraw();
  return { store, stream };
}

declare global {
  interface Window {
    vitalgateApp?: ReturnType<typeof startApp>;
  }
}

if (typeof document !== 'undefined' && document.getElementById('app')) {
  window.vitalgateApp = startApp(document.getElementById('app') as HTMLElement);
}
