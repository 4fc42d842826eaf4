// DOM wiring: create-session form, chat loop, report view. Per-turn
// request/response only (no streaming); one in-flight turn at a time,
// mirroring the server's per-session lock.

import { ApiClient, ApiError } from './api.js';
import { applyPatientMessage, applyTurn, initialView } from './state.js';
import { renderApp } from './render.js';
import type { DiagnosisReport } from './types.js';

export function mountApp(root: HTMLElement, client = new ApiClient()) {
  let view = initialView();
  let report: DiagnosisReport | null = null;

  function redraw() {
    root.innerHTML =
      `<form id="start-form" ${view.phase === 'idle' ? '' : 'hidden'}>` +
      `<input id="patient-id" value="${view.patientId}" placeholder="patient id"/>` +
      `<select id="age-band"><option value="">age band</option>` +
      `<option>18-39</option><option>40-64</option><option>65+</option></select>` +
      `<select id="sex"><option value="">sex</option><option>f</option><option>m</option></select>` +
      `<textarea id="first-symptoms" placeholder="describe your symptoms"></textarea>` +
      `<button>start consultation</button></form>` +
      `<div id="session-view">${renderApp(view, report)}</div>` +
      `<form id="chat-form" ${view.phase === 'consulting' ? '' : 'hidden'}>` +
      `<input id="chat-input" value="${view.draft.replace(/"/g, '&quot;')}" ` +
      `${view.inFlight ? 'disabled' : ''} placeholder="your reply"/>` +
      `<button ${view.inFlight ? 'disabled' : ''}>send</button></form>`;
    bind();
  }

  function bind() {
    const startForm = root.querySelector<HTMLFormElement>('#start-form');
    startForm?.addEventListener('submit', (e) => {
      e.preventDefault();
      void startSession();
    });
    const chatForm = root.querySelector<HTMLFormElement>('#chat-form');
    chatForm?.addEventListener('submit', (e) => {
      e.preventDefault();
      void sendReply();
    });
    root.querySelector('#consent-toggle')?.addEventListener('change', (e) => {
      view = { ...view, consent: (e.target as HTMLInputElement).checked };
    });
    root.querySelector('#retry-btn')?.addEventListener('click', () => {
      void sendReply();
    });
  }

  async function startSession() {
    const patientId =
      root.querySelector<HTMLInputElement>('#patient-id')?.value || 'p1';
    const symptoms =
      root.querySelector<HTMLTextAreaElement>('#first-symptoms')?.value ?? '';
    const ageBand = root.querySelector<HTMLSelectElement>('#age-band')?.value;
    const sex = root.querySelector<HTMLSelectElement>('#sex')?.value;
    if (!symptoms.trim()) return;
    view = { ...view, patientId, inFlight: true };
    redraw();
    try {
      // consent is registered before the session ever exists
      await client.setConsent(patientId, view.consent);
      const created = await client.createSession(patientId, symptoms, {
        age_band: ageBand || null,
        sex: sex || null,
        region: null,
      });
      view = { ...view, sessionId: created.session.session_id, phase: 'consulting' };
      view = applyPatientMessage(view, symptoms);
      view = applyTurn(view, created.turn);
      if (created.turn.phase === 'concluded') await loadReport();
    } catch (err) {
      view = { ...view, inFlight: false, errorBanner: describe(err) };
    }
    redraw();
  }

  async function sendReply() {
    const input = root.querySelector<HTMLInputElement>('#chat-input');
    const text = (input?.value ?? view.draft).trim();
    const sessionId = view.sessionId;
    if (!text || !sessionId || view.inFlight) return;
    view = { ...view, draft: text, inFlight: true, errorBanner: null };
    redraw();
    try {
      const turn = await client.sendMessage(sessionId, text);
      view = applyPatientMessage({ ...view, draft: '' }, text);
      view = applyTurn(view, turn);
      if (turn.phase === 'concluded') await loadReport();
    } catch (err) {
      // 429: keep the turn pending with a spinner; 502: retryable banner,
      // draft preserved either way
      const retryable = err instanceof ApiError && (err.retryable || err.inFlight);
      view = {
        ...view,
        inFlight: err instanceof ApiError && err.inFlight,
        errorBanner: retryable ? describe(err) : `unrecoverable: ${describe(err)}`,
      };
    }
    redraw();
  }

  async function loadReport() {
    if (!view.sessionId) return;
    report = await client.finalize(view.sessionId);
  }

  function describe(err: unknown): string {
    if (err instanceof ApiError) return `${err.kind}: ${err.message}`;
    return String(err);
  }

  redraw();
}

if (typeof document !== 'undefined') {
  const root = document.getElementById('app');
  if (root) mountApp(root);
}
