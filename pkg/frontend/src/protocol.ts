/**
 * Wire layer for the socket transport: one JSON text per message,
 * request/response correlation by id, typed payloads for calls, responses,
 * and event-log entries.
 */

export const PROTOCOL_VERSION = 'humantool/1';

export const ERR_INVALID_MESSAGE = -32600;
export const ERR_UNKNOWN_METHOD = -32601;
export const ERR_UNKNOWN_CALL = 40404;
export const ERR_PAST_DEADLINE = 40801;
export const ERR_DUPLICATE_RESPONSE = 40901;

export type MessageKind = 'request' | 'response' | 'error' | 'notification';

export interface WireMessage {
  protocol_version: string;
  kind: MessageKind;
  id?: number | string;
  method?: string;
  payload?: unknown;
  error?: { code: number; message: string; data?: unknown };
}

export type ResponseKind = 'free_text' | 'approval' | 'choice';

export interface HumanToolCall {
  call_id: string;
  session_id: string;
  node_id: string;
  stage: string;
  behavior: string;
  reason: string | null;
  prompt_text: string;
  response_kind: ResponseKind;
  deadline: string;
  issued_at: string;
  options?: string[];
}

export type OutcomePayload =
  | { kind: 'answered'; payload: string | number | boolean }
  | { kind: 'refused'; reason_text: string }
  | { kind: 'counter_proposal'; proposal_text: string };

export interface LogEntry {
  sequence_number: number;
  kind: 'session_start' | 'invocation' | 'stage_change' | 'tree_mutation' | 'wire_error';
  body: Record<string, any>;
}

export interface TreeNodeSnapshot {
  id: string;
  description: string;
  children: string[];
  requirement_flags: string[];
  status: string;
  allocation: { actor: string; reasons: string[]; primary_reason?: string } | null;
}

export function makeRequest(id: number | string, method: string, payload?: unknown): string {
  const message: WireMessage = { protocol_version: PROTOCOL_VERSION, kind: 'request', id, method };
  if (payload !== undefined) message.payload = payload;
  return JSON.stringify(message);
}

export function parseMessage(raw: string): WireMessage {
  let data: unknown;
  try {
    data = JSON.parse(raw);
  } catch (err) {
    throw new Error(`unparseable frame: ${(err as Error).message}`);
  }
  if (typeof data !== 'object' || data === null || Array.isArray(data)) {
    throw new Error('frame is not an object');
  }
  const message = data as WireMessage;
  if (!['request', 'response', 'error', 'notification'].includes(message.kind)) {
    throw new Error(`unknown message kind ${String(message.kind)}`);
  }
  return message;
}

/** Human-facing text for a server error frame, surfaced verbatim. */
export function describeError(error: { code: number; message: string } | undefined): string {
  if (!error) return 'unknown server error';
  return `server error ${error.code}: ${error.message}`;
}
