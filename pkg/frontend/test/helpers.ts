// Test plumbing: a local SSE server, a telemetry frame builder for feeding
// the real gateway, and polling helpers.

import { createServer, type IncomingMessage, type Server, type ServerResponse } from 'node:http';
import { AddressInfo } from 'node:net';

export interface SseTestServer {
  url: string;
  emit(id: number, event: string, data: unknown): void;
  comment(text: string): void;
  dropClients(): void;
  close(): Promise<void>;
  lastEventIdHeaders: (string | undefined)[];
  connectionCount: number;
}

/** Minimal SSE endpoint mirroring the gateway's stream framing. */
export async function createSseServer(): Promise<SseTestServer> {
  const clients = new Set<ServerResponse>();
  const lastEventIdHeaders: (string | undefined)[] = [];
  let connectionCount = 0;

  const server: Server = createServer((req: IncomingMessage, res: ServerResponse) => {
    connectionCount += 1;
    lastEventIdHeaders.push(req.headers['last-event-id'] as string | undefined);
    res.writeHead(200, {
      'Content-Type': 'text/event-stream',
      'Cache-Control': 'no-cache',
      Connection: 'close',
    });
    clients.add(res);
    req.on('close', () => clients.delete(res));
  });
  await new Promise<void>((resolve) => server.listen(0, '127.0.0.1', resolve));
  const { port } = server.address() as AddressInfo;

  return {
    url: `http://127.0.0.1:${port}/api/stream`,
    emit(id, event, data) {
      const chunk = `id: ${id}\nevent: ${event}\ndata: ${JSON.stringify(data)}\n\n`;
      for (const res of clients) res.write(chunk);
    },
    comment(text) {
      for (const res of clients) res.write(`: ${text}\n\n`);
    },
    dropClients() {
      for (const res of clients) res.destroy();
      clients.clear();
    },
    close() {
      for (const res of clients) res.destroy();
      clients.clear();
      return new Promise((resolve) => server.close(() => resolve()));
    },
    lastEventIdHeaders,
    get connectionCount() {
      return connectionCount;
    },
  };
}

export async function waitFor(
  predicate: () => boolean,
  timeoutMs = 5000,
  stepMs = 10,
): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (Date.now() < deadline) {
    if (predicate()) return;
    await new Promise((resolve) => setTimeout(resolve, stepMs));
  }
  throw new Error('timed out waiting for condition');
}

// -- Telemetry frame builder (the documented wire format) ----------------------

const METRIC_CODES: Record<string, number> = { temperature: 1, heart_rate: 2, ecg: 3 };

/** Encode one unescaped receive frame carrying a telemetry payload. */
export function encodeTelemetryFrame(
  patientId: number,
  metric: 'temperature' | 'heart_rate' | 'ecg',
  rawValue: number,
  sequence = 0,
): Uint8Array {
  const payload = new Uint8Array(8);
  const view = new DataView(payload.buffer);
  view.setUint8(0, 0x01);
  view.setUint16(1, patientId, false);
  view.setUint8(3, METRIC_CODES[metric]);
  view.setUint16(4, sequence, false);
  view.setInt16(6, rawValue, false);

  const addr64 = new Uint8Array([0x00, 0x13, 0xa2, 0x00, 0x00, 0x00, 0x00, patientId & 0xff]);
  const region = new Uint8Array(1 + 8 + 2 + 1 + payload.length);
  region[0] = 0x90;
  region.set(addr64, 1);
  region[9] = (patientId >> 8) & 0xff;
  region[10] = patientId & 0xff;
  region[11] = 0x01;
  region.set(payload, 12);

  let sum = 0;
  for (const byte of region) sum = (sum + byte) & 0xff;
  const checksum = 0xff - sum;

  const frame = new Uint8Array(3 + region.length + 1);
  frame[0] = 0x7e;
  frame[1] = (region.length >> 8) & 0xff;
  frame[2] = region.length & 0xff;
  frame.set(region, 3);
  frame[frame.length - 1] = checksum;
  return frame;
}
