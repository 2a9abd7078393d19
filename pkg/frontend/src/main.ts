/**
 * Browser wiring: mount the console into the page, route form events to the
 * client, and keep the countdown ticking.
 */

import { ConsoleClient } from './connection.js';
import { renderCall, renderIdle, renderStatusBar, renderTranscript, renderTree } from './render.js';
import { countdownSeconds } from './state.js';
import type { SocketLike } from './connection.js';

function browserSocket(url: string): SocketLike {
  const ws = new WebSocket(url);
  const adapter: SocketLike = {
    send: (text) => ws.send(text),
    close: () => ws.close(),
    onopen: null,
    onmessage: null,
    onclose: null,
    onerror: null,
  };
  ws.onopen = () => adapter.onopen?.();
  ws.onmessage = (event) => adapter.onmessage?.(String(event.data));
  ws.onclose = () => adapter.onclose?.();
  ws.onerror = () => adapter.onerror?.('socket error');
  return adapter;
}

function required(id: string): HTMLElement {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing #${id}`);
  return el;
}

export function mount(): void {
  const params = new URLSearchParams(window.location.search);
  const server = params.get('server') ?? `ws://${window.location.hostname}:8787`;
  const sessionId = params.get('session') ?? '';
  const statusEl = required('status');
  const callEl = required('call');
  const treeEl = required('tree');
  const transcriptEl = required('transcript');

  if (!sessionId) {
    callEl.innerHTML = '<p class="warning">Add ?session=&lt;id&gt;&amp;server=ws://host:port to the URL.</p>';
    return;
  }

  const client = new ConsoleClient({
    serverUrl: server,
    sessionId,
    socketFactory: browserSocket,
    onChange: (state) => {
      statusEl.innerHTML = renderStatusBar(state);
      callEl.innerHTML = state.pendingCall ? renderCall(state.pendingCall, new Date()) : renderIdle(state);
      treeEl.innerHTML = renderTree(state);
      transcriptEl.innerHTML = renderTranscript(state.transcript);
      transcriptEl.scrollTop = transcriptEl.scrollHeight;
    },
  });

  callEl.addEventListener('click', (event) => {
    const target = event.target as HTMLElement;
    const value = (id: string) => (document.getElementById(id) as HTMLInputElement | null)?.value ?? '';
    switch (target.id) {
      case 'btn-approve':
        void client.submit({ action: 'answer', approval: true });
        break;
      case 'btn-reject':
        void client.submit({ action: 'answer', approval: false });
        break;
      case 'btn-submit-text':
        void client.submit({ action: 'answer', text: value('input-answer') });
        break;
      case 'btn-ack':
        void client.submit({ action: 'ack' });
        break;
      case 'btn-submit-choice': {
        const checked = document.querySelector<HTMLInputElement>('input[name="choice"]:checked');
        void client.submit({ action: 'answer', choiceIndex: checked ? Number(checked.value) : null });
        break;
      }
      case 'btn-refuse':
        void client.submit({ action: 'refuse', text: value('input-refuse-reason') });
        break;
      case 'btn-counter':
        void client.submit({ action: 'counter', text: value('input-counter') });
        break;
    }
  });

  // Tick the countdown; disable the call section client-side once expired.
  setInterval(() => {
    const call = client.state.pendingCall;
    const countdown = document.getElementById('countdown');
    if (call && countdown) {
      const left = Math.floor(countdownSeconds(call, new Date()));
      countdown.textContent = left > 0 ? `${left}s left` : 'deadline passed';
    }
  }, 500);

  client.connect();
}

if (typeof window !== 'undefined' && typeof document !== 'undefined') {
  window.addEventListener('DOMContentLoaded', mount);
}
