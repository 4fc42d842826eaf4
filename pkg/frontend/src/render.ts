// Pure HTML renderers: the view is a function of served session state.

import type { Badge, CandidateView, ChatBubble, DiagnosisReport } from './types.js';
import type { SessionView } from './state.js';
import { sortedCandidates } from './state.js';

const BADGE_LABELS: Record<Badge, string> = {
  'none': '',
  'sensor-reliable': 'sensor data (reliable)',
  'sensor-unreliable': 'sensor data UNRELIABLE — in-lab advised',
  'in-lab-requested': 'in-lab test requested',
};

function escapeHtml(text: string): string {
  return text
    .replace(/&/g, '&amp;')
    .replace(/</g, '&lt;')
    .replace(/>/g, '&gt;')
    .replace(/"/g, '&quot;');
}

export function renderBubble(bubble: ChatBubble): string {
  const badge =
    bubble.badge === 'none'
      ? ''
      : `<span class="badge badge-${bubble.badge}">${BADGE_LABELS[bubble.badge]}</span>`;
  return (
    `<div class="bubble bubble-${bubble.role}">` +
    `<div class="bubble-text">${escapeHtml(bubble.text)}</div>${badge}</div>`
  );
}

export function renderTranscript(bubbles: ChatBubble[]): string {
  return `<div class="transcript">${bubbles.map(renderBubble).join('')}</div>`;
}

export function renderCandidateBar(candidate: CandidateView): string {
  const pct = (candidate.final_prob * 100).toFixed(1);
  const cls = candidate.narrowed ? 'candidate narrowed' : 'candidate';
  return (
    `<div class="${cls}" title="${escapeHtml(candidate.explanation)}">` +
    `<span class="candidate-name">${escapeHtml(candidate.disease)}</span>` +
    `<span class="bar"><span class="bar-fill" style="width:${pct}%"></span></span>` +
    `<span class="candidate-prob">${pct}%</span>` +
    (candidate.narrowed ? '<span class="narrowed-tag">narrowed out</span>' : '') +
    `</div>`
  );
}

export function renderCandidatePanel(view: SessionView): string {
  const rows = sortedCandidates(view).map(renderCandidateBar).join('');
  return `<div class="candidate-panel">${rows || '<p class="empty">no candidates yet</p>'}</div>`;
}

export function renderReport(report: DiagnosisReport): string {
  const rows = report.ranked
    .map(
      (r) =>
        `<li><strong>${escapeHtml(r.disease)}</strong> — ` +
        `${(r.probability * 100).toFixed(1)}%` +
        `<div class="explanation">${escapeHtml(r.explanation)}</div></li>`,
    )
    .join('');
  const note = report.forced
    ? '<p class="forced-note">Session ended at the turn limit.</p>'
    : '';
  return `<div class="report"><h2>Diagnosis report</h2><ol>${rows}</ol>${note}</div>`;
}

export function renderStatusBar(view: SessionView): string {
  const spinner = view.inFlight ? '<span class="spinner">working…</span>' : '';
  const banner = view.errorBanner
    ? `<div class="error-banner">${escapeHtml(view.errorBanner)} ` +
      `<button id="retry-btn">retry</button></div>`
    : '';
  const consent = `<label class="consent-toggle">` +
    `<input type="checkbox" id="consent-toggle" ${view.consent ? 'checked' : ''}/>` +
    ` share wearable sensor data</label>`;
  return `<div class="status-bar">${consent}${spinner}</div>${banner}`;
}

export function renderApp(view: SessionView, report: DiagnosisReport | null): string {
  return (
    renderStatusBar(view) +
    renderTranscript(view.bubbles) +
    renderCandidatePanel(view) +
    (report ? renderReport(report) : '')
  );
}
