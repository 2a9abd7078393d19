/**
 * Live session client: subscribes over the socket transport, folds events
 * into the view state, correlates requests, and reconnects with exponential
 * backoff resuming from the last seen sequence number.
 */

import {
  describeError,
  makeRequest,
  parseMessage,
  type HumanToolCall,
  type OutcomePayload,
  type WireMessage,
} from './protocol.js';
import { applyCall, applyEntries, initialState, type ViewState } from './state.js';
import { buildOutcome, SingleFlight, SubmitBlocked, type SubmitAction } from './submit.js';

/** The slice of the WebSocket surface the client needs; adapters wrap the
 * browser WebSocket or the node `ws` implementation. */
export interface SocketLike {
  send(text: string): void;
  close(): void;
  onopen: (() => void) | null;
  onmessage: ((text: string) => void) | null;
  onclose: (() => void) | null;
  onerror: ((message: string) => void) | null;
}

export type SocketFactory = (url: string) => SocketLike;

export interface ClientOptions {
  /** e.g. ws://127.0.0.1:8787 */
  serverUrl: string;
  sessionId: string;
  socketFactory: SocketFactory;
  onChange?: (state: ViewState) => void;
  now?: () => Date;
  /** Backoff schedule in ms; the last value repeats. */
  backoffMs?: number[];
  maxReconnects?: number;
}

const DEFAULT_BACKOFF = [500, 1000, 2000, 4000, 8000];

interface PendingRequest {
  resolve: (message: WireMessage) => void;
  reject: (error: Error) => void;
}

export class ServerError extends Error {
  constructor(public code: number, message: string) {
    super(message);
  }
}

export class ConsoleClient {
  readonly state: ViewState = initialState();

  private socket: SocketLike | null = null;
  private nextId = 1;
  private pendingRequests = new Map<number | string, PendingRequest>();
  private attempts = 0;
  private closedByUs = false;
  private reconnectTimer: ReturnType<typeof setTimeout> | null = null;
  private singleFlight = new SingleFlight();

  constructor(private options: ClientOptions) {}

  private now(): Date {
    return this.options.now ? this.options.now() : new Date();
  }

  private emit(): void {
    this.options.onChange?.(this.state);
  }

  connect(): void {
    this.closedByUs = false;
    this.open();
  }

  private url(): string {
    return `${this.options.serverUrl}/session/${this.options.sessionId}`;
  }

  private open(): void {
    this.state.connection = this.attempts === 0 ? 'connecting' : 'reconnecting';
    this.emit();
    const socket = this.options.socketFactory(this.url());
    this.socket = socket;
    socket.onopen = () => {
      void this.subscribe();
    };
    socket.onmessage = (text) => this.handleFrame(text);
    socket.onerror = () => {
      /* the close handler owns recovery */
    };
    socket.onclose = () => {
      this.socket = null;
      this.failAllRequests(new Error('connection closed'));
      if (this.closedByUs) {
        this.state.connection = 'closed';
        this.emit();
        return;
      }
      this.scheduleReconnect();
    };
  }

  private scheduleReconnect(): void {
    const max = this.options.maxReconnects ?? Infinity;
    if (this.attempts >= max) {
      this.state.connection = 'closed';
      this.state.notice = 'Gave up reconnecting.';
      this.emit();
      return;
    }
    const schedule = this.options.backoffMs ?? DEFAULT_BACKOFF;
    const delay = schedule[Math.min(this.attempts, schedule.length - 1)];
    this.attempts += 1;
    this.state.connection = 'reconnecting';
    this.emit();
    this.reconnectTimer = setTimeout(() => this.open(), delay);
  }

  private async subscribe(): Promise<void> {
    try {
      await this.request('session/start', { last_seen_sequence: this.state.lastSequence });
      this.attempts = 0;
      this.state.connection = 'open';
      this.state.notice = null;
      this.emit();
    } catch (err) {
      this.state.notice = (err as Error).message;
      this.emit();
      this.socket?.close();
    }
  }

  private handleFrame(text: string): void {
    let message: WireMessage;
    try {
      message = parseMessage(text);
    } catch {
      return; // unparseable frames are dropped; the server log has them
    }
    if (message.kind === 'response' || message.kind === 'error') {
      const id = message.id;
      const waiter = id !== undefined && id !== null ? this.pendingRequests.get(id) : undefined;
      if (waiter) {
        this.pendingRequests.delete(id!);
        if (message.kind === 'error') waiter.reject(new ServerError(message.error!.code, describeError(message.error)));
        else waiter.resolve(message);
      }
      return;
    }
    if (message.kind === 'notification') {
      if (message.method === 'session/events') {
        const payload = message.payload as { entries: any[] };
        applyEntries(this.state, payload.entries ?? []);
        this.emit();
      } else if (message.method === 'tools/call') {
        applyCall(this.state, message.payload as HumanToolCall);
        this.emit();
      }
    }
  }

  private failAllRequests(error: Error): void {
    for (const waiter of this.pendingRequests.values()) waiter.reject(error);
    this.pendingRequests.clear();
  }

  request(method: string, payload?: unknown): Promise<WireMessage> {
    const socket = this.socket;
    if (!socket) return Promise.reject(new Error('not connected'));
    const id = this.nextId++;
    const promise = new Promise<WireMessage>((resolve, reject) => {
      this.pendingRequests.set(id, { resolve, reject });
    });
    socket.send(makeRequest(id, method, payload));
    return promise;
  }

  /**
   * Validate, guard, and send one response for the pending call. Server
   * errors are surfaced verbatim in the notice; client-side blocks never
   * produce a frame.
   */
  async submit(action: SubmitAction): Promise<boolean> {
    const call = this.state.pendingCall;
    if (!call) {
      this.state.notice = 'No call is waiting for a response.';
      this.emit();
      return false;
    }
    let outcome: OutcomePayload;
    try {
      outcome = buildOutcome(call, action, this.now());
      this.singleFlight.begin(call.call_id);
    } catch (err) {
      if (err instanceof SubmitBlocked) {
        this.state.notice = err.message;
        this.emit();
        return false;
      }
      throw err;
    }
    this.state.submitting = true;
    this.state.notice = null;
    this.emit();
    try {
      await this.request('tools/respond', {
        call_id: call.call_id,
        outcome,
        received_at: this.now().toISOString(),
      });
      return true;
    } catch (err) {
      this.state.notice = (err as Error).message;
      return false;
    } finally {
      this.singleFlight.settle(call.call_id);
      this.state.submitting = false;
      this.emit();
    }
  }

  async abort(): Promise<void> {
    await this.request('session/abort', {});
  }

  async listTools(): Promise<unknown> {
    const reply = await this.request('tools/list');
    return reply.payload;
  }

  close(): void {
    this.closedByUs = true;
    if (this.reconnectTimer) clearTimeout(this.reconnectTimer);
    this.socket?.close();
    this.state.connection = 'closed';
    this.emit();
  }

  /** Test hook: drop the socket as if the network died. */
  dropConnection(): void {
    this.socket?.close();
  }
}
