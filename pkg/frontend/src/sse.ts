// Server-sent-events client on top of fetch streams.
//
// EventSource would cover the happy path, but we need Last-Event-ID resume
// after our own backoff and a stale-data signal the UI can show within 10 s
// of losing the feed -- and a fetch-based reader also runs in node, where
// the test suite lives.

import type { ConnectionStatus, StreamEventType } from './types.js';

export interface ParsedEvent {
  id: number | null;
  type: string;
  data: string;
}

/** Incremental SSE wire parser; feed() returns events completed so far. */
export class SseParser {
  private buffer = '';

  feed(chunk: string): ParsedEvent[] {
    this.buffer += chunk.replace(/\r\n/g, '\n');
    const events: ParsedEvent[] = [];
    let split: number;
    while ((split = this.buffer.indexOf('\n\n')) >= 0) {
      const block = this.buffer.slice(0, split);
      this.buffer = this.buffer.slice(split + 2);
      const event: ParsedEvent = { id: null, type: 'message', data: '' };
      const dataLines: string[] = [];
      for (const line of block.split('\n')) {
        if (line.startsWith(':')) continue; // comment / keepalive
        if (line.startsWith('id:')) event.id = Number(line.slice(3).trim());
        else if (line.startsWith('event:')) event.type = line.slice(6).trim();
        else if (line.startsWith('data:')) dataLines.push(line.slice(5).trimStart());
      }
      if (dataLines.length > 0) {
        event.data = dataLines.join('\n');
        events.push(event);
      }
    }
    return events;
  }
}

export interface SseClientOptions {
  url: string;
  onEvent: (id: number, type: StreamEventType, data: unknown) => void;
  onStatus?: (status: ConnectionStatus) => void;
  lastEventId?: number;
  reconnectBaseMs?: number;
  reconnectMaxMs?: number;
  staleAfterMs?: number;
  fetchFn?: typeof fetch;
}

/** Streaming client with automatic reconnect-and-resume. */
export class SseClient {
  lastEventId: number | null;
  private readonly opts: Required<Pick<SseClientOptions, 'reconnectBaseMs' | 'reconnectMaxMs' | 'staleAfterMs'>> &
    SseClientOptions;
  private closed = false;
  private attempt = 0;
  private staleTimer: ReturnType<typeof setTimeout> | null = null;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private abort: AbortController | null = null;

  constructor(options: SseClientOptions) {
    this.opts = {
      reconnectBaseMs: 1000,
      reconnectMaxMs: 10_000,
      staleAfterMs: 10_000,
      ...options,
    };
    this.lastEventId = options.lastEventId ?? null;
  }

  connect(): void {
    this.closed = false;
    void this.run();
  }

  close(): void {
    this.closed = true;
    if (this.staleTimer) clearTimeout(this.staleTimer);
    if (this.reconnectTimer) clearTimeout(this.reconnectTimer);
    this.abort?.abort();
  }

  private status(status: ConnectionStatus): void {
    this.opts.onStatus?.(status);
  }

  private touch(): void {
    // Any traffic (keepalives included) proves the feed is alive.
    if (this.staleTimer) clearTimeout(this.staleTimer);
    this.staleTimer = setTimeout(() => this.status('stale'), this.opts.staleAfterMs);
  }

  private async run(): Promise<void> {
    const fetchFn = this.opts.fetchFn ?? fetch;
    this.status('connecting');
    const headers: Record<string, string> = { Accept: 'text/event-stream' };
    if (this.lastEventId !== null) headers['Last-Event-ID'] = String(this.lastEventId);
    this.abort = new AbortController();
    try {
      const response = await fetchFn(this.opts.url, { headers, signal: this.abort.signal });
      if (!response.ok || !response.body) throw new Error(`stream HTTP ${response.status}`);
      this.attempt = 0;
      this.status('live');
      this.touch();
      const parser = new SseParser();
      const decoder = new TextDecoder();
      const reader = response.body.getReader();
      for (;;) {
        const { done, value } = await reader.read();
        if (done) break;
        this.touch();
        for (const event of parser.feed(decoder.decode(value, { stream: true }))) {
          if (event.id !== null) this.lastEventId = event.id;
          try {
            this.opts.onEvent(event.id ?? -1, event.type as StreamEventType, JSON.parse(event.data));
          } catch {
            // Non-JSON payloads are dropped; the stream itself stays up.
          }
        }
      }
    } catch {
      // fall through to reconnect
    }
    if (this.closed) return;
    this.status('stale');
    const delay = Math.min(
      this.opts.reconnectBaseMs * 2 ** this.attempt,
      this.opts.reconnectMaxMs,
    );
    this.attempt += 1;
    this.reconnectTimer = setTimeout(() => void this.run(), delay);
  }
}

/** Backoff schedule used by the client; exported for tests. */
export function backoffDelays(baseMs: number, maxMs: number, attempts: number): number[] {
  const delays: number[] = [];
  for (let i = 0; i < attempts; i++) delays.push(Math.min(baseMs * 2 ** i, maxMs));
  return delays;
}
