// Session view state: a pure reducer over served turn results. The badge on
// a doctor turn derives only from the structured TurnResult fields, never
// from message text, and candidate probabilities are kept exactly as served.

import type { Badge, CandidateView, ChatBubble, TurnResult } from './types.js';

export interface SessionView {
  sessionId: string | null;
  patientId: string;
  phase: 'idle' | 'consulting' | 'concluded';
  bubbles: ChatBubble[];
  candidates: CandidateView[];
  consent: boolean;
  inFlight: boolean;
  errorBanner: string | null;
  draft: string;
}

export function initialView(patientId = 'p1'): SessionView {
  return {
    sessionId: null,
    patientId,
    phase: 'idle',
    bubbles: [],
    candidates: [],
    consent: true,
    inFlight: false,
    errorBanner: null,
    draft: '',
  };
}

export function badgeFor(turn: TurnResult): Badge {
  const info = turn.retrieval_info;
  if (info.retrieval_performed && info.reliable === true) return 'sensor-reliable';
  if (info.retrieval_performed && info.reliable === false) return 'sensor-unreliable';
  if (turn.action.kind === 'request_inlab_test') return 'in-lab-requested';
  return 'none';
}

export function applyPatientMessage(view: SessionView, text: string): SessionView {
  return {
    ...view,
    bubbles: [...view.bubbles, { role: 'patient', text, badge: 'none' }],
  };
}

export function applyTurn(view: SessionView, turn: TurnResult): SessionView {
  return {
    ...view,
    phase: turn.phase,
    bubbles: [
      ...view.bubbles,
      { role: 'doctor', text: turn.doctor_msg, badge: badgeFor(turn) },
    ],
    // served values verbatim: no client-side renormalization
    candidates: turn.candidates,
    inFlight: false,
    errorBanner: null,
  };
}

export function sortedCandidates(view: SessionView): CandidateView[] {
  return [...view.candidates].sort((a, b) => {
    if (a.narrowed !== b.narrowed) return a.narrowed ? 1 : -1;
    return b.final_prob - a.final_prob;
  });
}
