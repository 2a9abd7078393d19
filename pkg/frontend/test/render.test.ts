import { describe, expect, it } from 'vitest';

import { TABLES } from '../src/generated/tables.js';
import type { HumanToolCall, ResponseKind } from '../src/protocol.js';
import { behaviorLabel, renderCall, renderTranscript, renderTree } from '../src/render.js';
import { applyEntries, initialState } from '../src/state.js';

const NOW = new Date('2024-01-01T00:00:00Z');

function call(behavior: string, responseKind: ResponseKind, options?: string[]): HumanToolCall {
  return {
    call_id: 'c-render',
    session_id: 's-1',
    node_id: 'n1',
    stage: behavior === 'prime' ? 'initial' : 'during',
    behavior,
    reason: behavior === 'approve' ? 'authority_control' : null,
    prompt_text: 'Prompt text for the form',
    response_kind: responseKind,
    deadline: '2024-01-01T00:05:00Z',
    issued_at: '2024-01-01T00:00:00Z',
    options,
  };
}

function count(html: string, needle: string | RegExp): number {
  const re = typeof needle === 'string' ? new RegExp(needle.replace(/[.*+?^${}()|[\]\\]/g, '\\$&'), 'g') : needle;
  return (html.match(re) ?? []).length;
}

describe('control sets per response kind', () => {
  it('approval renders accept/reject buttons and no text area', () => {
    const html = renderCall(call('approve', 'approval'), NOW);
    expect(html).toContain('id="btn-approve"');
    expect(html).toContain('id="btn-reject"');
    expect(html).not.toContain('id="input-answer"');
    expect(count(html, /controls-approval/g)).toBe(1);
  });

  it('choice with three options renders three radios', () => {
    const html = renderCall(call('elicit', 'choice', ['red', 'green', 'blue']), NOW);
    expect(count(html, /type="radio"/g)).toBe(3);
    expect(html).toContain('id="btn-submit-choice"');
    expect(html).not.toContain('id="btn-approve"');
  });

  it('free_text renders one text area and a send button', () => {
    const html = renderCall(call('elicit', 'free_text'), NOW);
    expect(count(html, /id="input-answer"/g)).toBe(1);
    expect(html).toContain('id="btn-submit-text"');
    expect(html).not.toContain('type="radio"');
  });

  it('acknowledgment shortcut appears exactly for ack behaviors', () => {
    for (const behavior of TABLES.behaviors) {
      const kind = (TABLES.response_kinds as Record<string, ResponseKind>)[behavior];
      const html = renderCall(call(behavior, kind), NOW);
      const shouldAck = (TABLES.ack_behaviors as readonly string[]).includes(behavior) && kind === 'free_text';
      expect(html.includes('id="btn-ack"'), behavior).toBe(shouldAck);
    }
  });

  it('every call carries the refuse and counter-proposal controls', () => {
    for (const kind of ['approval', 'free_text'] as ResponseKind[]) {
      const html = renderCall(call('approve', kind), NOW);
      expect(html).toContain('id="btn-refuse"');
      expect(html).toContain('id="btn-counter"');
    }
  });

  it('snapshots one form per behavior from the exported tables', () => {
    for (const behavior of TABLES.behaviors) {
      const kind = (TABLES.response_kinds as Record<string, ResponseKind>)[behavior];
      expect(renderCall(call(behavior, kind), NOW)).toMatchSnapshot(`form-${behavior}`);
    }
    expect(renderCall(call('elicit', 'choice', ['a', 'b']), NOW)).toMatchSnapshot('form-choice');
  });
});

describe('badges and labels', () => {
  it('behavior badge text comes from the exported table labels', () => {
    for (const behavior of TABLES.behaviors) {
      const kind = (TABLES.response_kinds as Record<string, ResponseKind>)[behavior];
      const html = renderCall(call(behavior, kind), NOW);
      const label = (TABLES.behavior_labels as Record<string, string>)[behavior];
      expect(label).toBeTruthy();
      expect(html).toContain(`>${label}</span>`);
      expect(behaviorLabel(behavior)).toBe(label);
    }
  });

  it('stage and reason are shown as badges', () => {
    const html = renderCall(call('approve', 'approval'), NOW);
    expect(html).toContain('badge-stage');
    expect(html).toContain('badge-reason');
    expect(html).toContain('authority_control');
  });

  it('unknown behavior falls back to a generic form with a warning', () => {
    const html = renderCall(call('interpretive_dance', 'free_text'), NOW);
    expect(html).toContain('Unknown behavior');
    expect(html).toContain('id="input-answer"');
  });

  it('prompt text is escaped', () => {
    const sneaky = call('elicit', 'free_text');
    sneaky.prompt_text = '<script>alert(1)</script>';
    const html = renderCall(sneaky, NOW);
    expect(html).not.toContain('<script>');
    expect(html).toContain('&lt;script&gt;');
  });

  it('countdown clamps at zero in the rendered call', () => {
    const expired = call('elicit', 'free_text');
    const html = renderCall(expired, new Date('2024-01-01T01:00:00Z'));
    expect(html).toContain('0s left');
  });
});

describe('tree and transcript', () => {
  it('renders status classes per node', () => {
    const state = initialState();
    applyEntries(state, [
      {
        sequence_number: 1,
        kind: 'session_start',
        body: {
          session_id: 's-1',
          mode: 'human_tool',
          goal: 'g',
          tree: {
            nodes: [
              { id: 'root', description: 'goal', children: ['a'], requirement_flags: [], status: 'pending', allocation: null },
              { id: 'a', description: 'step', children: [], requirement_flags: [], status: 'pending', allocation: { actor: 'AI', reasons: [] } },
            ],
          },
        },
      },
      { sequence_number: 2, kind: 'tree_mutation', body: { action: 'set_status', node_id: 'a', status: 'done' } },
    ]);
    const html = renderTree(state);
    expect(html).toContain('status-done');
    expect(html).toContain('[AI]');
  });

  it('transcript rows carry their sequence numbers', () => {
    const state = initialState();
    applyEntries(state, [
      { sequence_number: 1, kind: 'session_start', body: { session_id: 's', goal: 'g' } },
      { sequence_number: 2, kind: 'stage_change', body: { from: 'initial', to: 'during', event: 'context_established' } },
    ]);
    const html = renderTranscript(state.transcript);
    expect(html).toContain('data-seq="1"');
    expect(html).toContain('data-seq="2"');
  });
});
