/**
 * Client-side guards for outgoing responses. The server stays
 * authoritative; these exist to catch mistakes before a frame is sent and
 * to keep double-clicks from producing two frames.
 */

import type { HumanToolCall, OutcomePayload } from './protocol.js';
import { countdownSeconds } from './state.js';

export class SubmitBlocked extends Error {}

export interface SubmitAction {
  action: 'answer' | 'ack' | 'refuse' | 'counter';
  text?: string;
  approval?: boolean;
  choiceIndex?: number | null;
}

/**
 * Validate an action against the pending call and build the tools/respond
 * payload. Throws SubmitBlocked with a human-readable reason when the
 * submission must not leave the client.
 */
export function buildOutcome(call: HumanToolCall, action: SubmitAction, now: Date): OutcomePayload {
  if (countdownSeconds(call, now) <= 0) {
    throw new SubmitBlocked('The deadline for this call has passed; the orchestrator will proceed without it.');
  }
  switch (action.action) {
    case 'refuse': {
      const reason = (action.text ?? '').trim();
      if (!reason) throw new SubmitBlocked('Refusing needs a short reason so the orchestrator can repair.');
      return { kind: 'refused', reason_text: reason };
    }
    case 'counter': {
      const proposal = (action.text ?? '').trim();
      if (!proposal) throw new SubmitBlocked('A counter-proposal needs text to negotiate with.');
      return { kind: 'counter_proposal', proposal_text: proposal };
    }
    case 'ack':
      return { kind: 'answered', payload: 'ok' };
    case 'answer':
      break;
  }
  if (call.response_kind === 'approval') {
    if (typeof action.approval !== 'boolean') throw new SubmitBlocked('Pick approve or reject.');
    return { kind: 'answered', payload: action.approval };
  }
  if (call.response_kind === 'choice') {
    const index = action.choiceIndex;
    if (index === null || index === undefined || !Number.isInteger(index)) {
      throw new SubmitBlocked('Pick one of the options first.');
    }
    const options = call.options ?? [];
    if (index < 0 || index >= options.length) throw new SubmitBlocked('That option is out of range.');
    return { kind: 'answered', payload: index };
  }
  const text = (action.text ?? '').trim();
  if (!text) throw new SubmitBlocked('Write an answer first (or acknowledge, where offered).');
  return { kind: 'answered', payload: text };
}

/** One frame per call: flips a latch that only a server reply releases. */
export class SingleFlight {
  private inFlight = new Set<string>();

  begin(callId: string): void {
    if (this.inFlight.has(callId)) throw new SubmitBlocked('Already submitting this call; hold on.');
    this.inFlight.add(callId);
  }

  settle(callId: string): void {
    this.inFlight.delete(callId);
  }

  isBusy(callId: string): boolean {
    return this.inFlight.has(callId);
  }
}
