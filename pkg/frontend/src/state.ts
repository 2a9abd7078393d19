/**
 * View state folded from the server event stream.
 *
 * The console holds no truth of its own: everything rendered derives from
 * log entries (deduplicated by sequence number) plus the currently
 * announced call. A full reload replays the same entries and lands on the
 * same state.
 */

import type { HumanToolCall, LogEntry, TreeNodeSnapshot } from './protocol.js';

export type ConnectionStatus = 'connecting' | 'open' | 'reconnecting' | 'closed';

export interface TranscriptRow {
  sequence: number;
  kind: string;
  label: string;
  detail: string;
}

export interface ViewState {
  connection: ConnectionStatus;
  sessionId: string | null;
  mode: string | null;
  goal: string;
  stage: string;
  nodes: Map<string, TreeNodeSnapshot>;
  rootId: string | null;
  pendingCall: HumanToolCall | null;
  transcript: TranscriptRow[];
  lastSequence: number;
  completedCalls: Set<string>;
  submitting: boolean;
  notice: string | null;
}

export function initialState(): ViewState {
  return {
    connection: 'connecting',
    sessionId: null,
    mode: null,
    goal: '',
    stage: 'initial',
    nodes: new Map(),
    rootId: null,
    pendingCall: null,
    transcript: [],
    lastSequence: 0,
    completedCalls: new Set(),
    submitting: false,
    notice: null,
  };
}

const CLEARED = new Set(['done', 'skipped']);
const TERMINAL = new Set(['done', 'skipped', 'failed']);

function loadTree(state: ViewState, tree: { nodes: TreeNodeSnapshot[] }): void {
  state.nodes = new Map();
  const referenced = new Set<string>();
  for (const node of tree.nodes) {
    state.nodes.set(node.id, { ...node, children: [...node.children] });
    for (const child of node.children) referenced.add(child);
  }
  state.rootId = tree.nodes.map((n) => n.id).find((id) => !referenced.has(id)) ?? null;
}

/** Mirror of the engine's ancestor-status recomputation. */
function recomputeAncestors(state: ViewState, nodeId: string): void {
  let parent = parentOf(state, nodeId);
  while (parent) {
    const node = state.nodes.get(parent)!;
    const statuses = node.children.map((c) => state.nodes.get(c)?.status ?? 'pending');
    if (statuses.every((s) => CLEARED.has(s))) node.status = 'done';
    else if (statuses.every((s) => TERMINAL.has(s)) && statuses.includes('failed')) node.status = 'failed';
    else if (statuses.some((s) => s !== 'pending')) node.status = 'in_progress';
    else node.status = 'pending';
    parent = parentOf(state, parent);
  }
}

function parentOf(state: ViewState, nodeId: string): string | null {
  for (const [id, node] of state.nodes) {
    if (node.children.includes(nodeId)) return id;
  }
  return null;
}

function transcriptRow(entry: LogEntry): TranscriptRow {
  const body = entry.body;
  switch (entry.kind) {
    case 'session_start':
      return { sequence: entry.sequence_number, kind: entry.kind, label: 'session started', detail: body.goal ?? '' };
    case 'stage_change':
      return {
        sequence: entry.sequence_number,
        kind: entry.kind,
        label: `stage ${body.from} -> ${body.to}`,
        detail: body.event ?? '',
      };
    case 'tree_mutation':
      if (body.action === 'replace_subtree') {
        return {
          sequence: entry.sequence_number,
          kind: entry.kind,
          label: `replanned ${body.node_id}`,
          detail: `${(body.nodes ?? []).length} nodes`,
        };
      }
      return {
        sequence: entry.sequence_number,
        kind: entry.kind,
        label: `${body.node_id} -> ${body.status}`,
        detail: '',
      };
    case 'invocation': {
      const record = body.record ?? {};
      const who = record.outcome === 'ai_executed' ? 'AI' : record.behavior ?? 'call';
      return {
        sequence: entry.sequence_number,
        kind: entry.kind,
        label: `${who}: ${record.outcome}`,
        detail: body.prompt_text ?? body.context_append ?? '',
      };
    }
    case 'wire_error':
      return {
        sequence: entry.sequence_number,
        kind: entry.kind,
        label: `wire error ${body.code}`,
        detail: body.message ?? '',
      };
  }
}

/**
 * Fold a batch of log entries into the state. Entries at or below the
 * last seen sequence number are duplicates from a resume and are dropped.
 */
export function applyEntries(state: ViewState, entries: LogEntry[]): void {
  for (const entry of entries) {
    if (entry.sequence_number <= state.lastSequence) continue;
    state.lastSequence = entry.sequence_number;
    state.transcript.push(transcriptRow(entry));
    const body = entry.body;
    switch (entry.kind) {
      case 'session_start':
        state.sessionId = body.session_id ?? state.sessionId;
        state.mode = body.mode ?? state.mode;
        state.goal = body.goal ?? '';
        if (body.tree) loadTree(state, body.tree);
        break;
      case 'stage_change':
        state.stage = body.to;
        break;
      case 'tree_mutation':
        if (body.action === 'set_status') {
          const node = state.nodes.get(body.node_id);
          if (node) {
            node.status = body.status;
            recomputeAncestors(state, body.node_id);
          }
        } else if (body.action === 'replace_subtree') {
          applyReplacement(state, body.node_id, body.nodes ?? []);
        }
        break;
      case 'invocation':
        if (body.call_id) {
          state.completedCalls.add(body.call_id);
          if (state.pendingCall?.call_id === body.call_id) {
            state.pendingCall = null;
            state.submitting = false;
          }
        }
        break;
      case 'wire_error':
        break;
    }
  }
}

function applyReplacement(state: ViewState, nodeId: string, replacement: TreeNodeSnapshot[]): void {
  const stale = new Set<string>();
  const collect = (id: string): void => {
    stale.add(id);
    for (const child of state.nodes.get(id)?.children ?? []) collect(child);
  };
  if (state.nodes.has(nodeId)) collect(nodeId);
  for (const id of stale) state.nodes.delete(id);
  for (const node of replacement) state.nodes.set(node.id, { ...node, children: [...node.children] });
  recomputeAncestors(state, nodeId);
}

/**
 * Register an announced call. Re-announcements (reconnect) and calls whose
 * outcome is already in the transcript are ignored, so at most one pending
 * call is ever rendered.
 */
export function applyCall(state: ViewState, call: HumanToolCall): void {
  if (state.completedCalls.has(call.call_id)) return;
  if (state.pendingCall?.call_id === call.call_id) return;
  state.pendingCall = call;
  state.submitting = false;
}

/** Seconds left on the pending call; never negative. */
export function countdownSeconds(call: HumanToolCall, now: Date): number {
  const remaining = (new Date(call.deadline).getTime() - now.getTime()) / 1000;
  return Math.max(0, remaining);
}

export function leafCensus(state: ViewState): Record<string, number> {
  const census: Record<string, number> = { pending: 0, in_progress: 0, done: 0, failed: 0, skipped: 0 };
  for (const node of state.nodes.values()) {
    if (node.children.length === 0) census[node.status] = (census[node.status] ?? 0) + 1;
  }
  return census;
}
