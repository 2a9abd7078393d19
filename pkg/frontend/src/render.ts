/**
 * HTML rendering. Pure string producers so the control sets are directly
 * snapshot-testable; main.ts wires the event handlers by element id.
 */

import type { HumanToolCall } from './protocol.js';
import type { TranscriptRow, ViewState } from './state.js';
import { countdownSeconds, leafCensus } from './state.js';
import { TABLES } from './generated/tables.js';

function esc(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

export function behaviorLabel(behavior: string): string {
  const labels = TABLES.behavior_labels as Record<string, string>;
  return labels[behavior] ?? behavior;
}

export function isKnownBehavior(behavior: string): boolean {
  return (TABLES.behaviors as readonly string[]).includes(behavior);
}

function badges(call: HumanToolCall): string {
  const parts = [
    `<span class="badge badge-stage">${esc(call.stage)}</span>`,
    `<span class="badge badge-behavior" title="${esc(call.behavior)}">${esc(behaviorLabel(call.behavior))}</span>`,
  ];
  if (call.reason) parts.push(`<span class="badge badge-reason">${esc(call.reason)}</span>`);
  return `<div class="badges">${parts.join(' ')}</div>`;
}

function approvalControls(): string {
  return [
    '<div class="controls controls-approval">',
    '<button id="btn-approve" class="approve">Approve</button>',
    '<button id="btn-reject" class="reject">Reject</button>',
    '</div>',
  ].join('\n');
}

function choiceControls(options: string[]): string {
  const radios = options
    .map(
      (option, i) =>
        `<label class="choice-option"><input type="radio" name="choice" value="${i}"> ${esc(option)}</label>`,
    )
    .join('\n');
  return [
    '<div class="controls controls-choice">',
    radios,
    '<button id="btn-submit-choice">Submit choice</button>',
    '</div>',
  ].join('\n');
}

function freeTextControls(ackAllowed: boolean): string {
  const parts = [
    '<div class="controls controls-free-text">',
    '<textarea id="input-answer" rows="3" placeholder="Your answer"></textarea>',
    '<button id="btn-submit-text">Send answer</button>',
  ];
  if (ackAllowed) parts.push('<button id="btn-ack">Acknowledge</button>');
  parts.push('</div>');
  return parts.join('\n');
}

function escalationControls(): string {
  return [
    '<details class="escalate"><summary>Refuse or negotiate</summary>',
    '<input id="input-refuse-reason" type="text" placeholder="Why are you refusing? (required)">',
    '<button id="btn-refuse">Refuse</button>',
    '<textarea id="input-counter" rows="2" placeholder="Counter-proposal"></textarea>',
    '<button id="btn-counter">Propose instead</button>',
    '</details>',
  ].join('\n');
}

/**
 * Exactly one response control set per response kind, plus the
 * refuse/negotiate escape hatch every call carries. Unknown behaviors fall
 * back to a generic free-text form (flagged, not crashed).
 */
export function renderCall(call: HumanToolCall, now: Date): string {
  const known = isKnownBehavior(call.behavior);
  const ackBehaviors = TABLES.ack_behaviors as readonly string[];
  let controls: string;
  if (call.response_kind === 'approval') {
    controls = approvalControls();
  } else if (call.response_kind === 'choice') {
    controls = choiceControls(call.options ?? []);
  } else {
    controls = freeTextControls(known && ackBehaviors.includes(call.behavior));
  }
  const seconds = Math.floor(countdownSeconds(call, now));
  return [
    `<section class="call" data-call-id="${esc(call.call_id)}" data-response-kind="${call.response_kind}">`,
    known ? '' : '<p class="warning">Unknown behavior; showing a generic reply form.</p>',
    badges(call),
    `<p class="prompt">${esc(call.prompt_text)}</p>`,
    `<p class="countdown" id="countdown" data-deadline="${esc(call.deadline)}">${seconds}s left</p>`,
    controls,
    escalationControls(),
    '</section>',
  ]
    .filter(Boolean)
    .join('\n');
}

export function renderIdle(state: ViewState): string {
  if (state.stage === 'ending') return '<section class="call idle">Session complete. Thank you!</section>';
  return '<section class="call idle">No call waiting; the orchestrator is working.</section>';
}

export function renderTree(state: ViewState): string {
  if (!state.rootId) return '<p class="empty">No task tree yet.</p>';
  const renderNode = (id: string): string => {
    const node = state.nodes.get(id);
    if (!node) return '';
    const actor = node.allocation ? ` <span class="actor">[${esc(node.allocation.actor)}]</span>` : '';
    const kids = node.children.map(renderNode).join('');
    const sub = kids ? `<ul>${kids}</ul>` : '';
    return `<li class="status-${esc(node.status)}"><span class="node-desc">${esc(node.description)}</span>${actor} <span class="status">${esc(node.status)}</span>${sub}</li>`;
  };
  return `<ul class="tree">${renderNode(state.rootId)}</ul>`;
}

export function renderTranscript(rows: TranscriptRow[]): string {
  if (rows.length === 0) return '<p class="empty">Nothing yet.</p>';
  const items = rows
    .map(
      (row) =>
        `<li class="row-${esc(row.kind)}" data-seq="${row.sequence}"><span class="seq">#${row.sequence}</span> <span class="label">${esc(row.label)}</span> <span class="detail">${esc(row.detail)}</span></li>`,
    )
    .join('\n');
  return `<ol class="transcript">${items}</ol>`;
}

export function renderStatusBar(state: ViewState): string {
  const census = leafCensus(state);
  const censusText = Object.entries(census)
    .map(([key, value]) => `${key} ${value}`)
    .join(' / ');
  return [
    `<span class="conn conn-${state.connection}">${state.connection}</span>`,
    `<span class="session">${esc(state.sessionId ?? '(no session)')}</span>`,
    `<span class="stage">${esc(state.stage)}</span>`,
    `<span class="census">${esc(censusText)}</span>`,
    state.notice ? `<span class="notice">${esc(state.notice)}</span>` : '',
  ]
    .filter(Boolean)
    .join(' ');
}
