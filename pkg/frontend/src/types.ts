// Mirrors of the /v1 JSON wire shapes. Field names match the server exactly.

export type ActionKind =
  | 'inquire_symptom'
  | 'request_inlab_test'
  | 'access_sensor_data'
  | 'summarize_diagnosis';

export interface Action {
  kind: ActionKind;
  argument: string;
}

export interface CandidateView {
  disease: string;
  symptom_similarity: number;
  demographics_prob: number;
  prior_prob: number;
  guideline_prob: number;
  final_prob: number;
  narrowed: boolean;
  explanation: string;
}

export interface RetrievalInfo {
  turn: number;
  filter_decision: boolean | null;
  filter_score: number | null;
  retrieval_performed: boolean;
  min_uncertainty: number | null;
  reliable: boolean | null;
  consent: boolean;
}

export interface TurnResult {
  turn: number;
  doctor_msg: string;
  action: Action;
  candidates: CandidateView[];
  retrieval_info: RetrievalInfo;
  phase: 'consulting' | 'concluded';
}

export interface ApiSession {
  session_id: string;
  patient_id: string;
  phase: string;
  turn_count: number;
  created_at: number | null;
  updated_at: number | null;
}

export interface RankedDisease {
  disease: string;
  probability: number;
  explanation: string;
}

export interface DiagnosisReport {
  ranked: RankedDisease[];
  forced: boolean;
}

export interface CreateSessionResponse {
  session: ApiSession;
  turn: TurnResult;
}

export interface SensorStats {
  patient_id: string;
  records: number;
  retrieval_reads: number;
  consent: boolean;
}

export type Badge = 'none' | 'sensor-reliable' | 'sensor-unreliable' | 'in-lab-requested';

export interface ChatBubble {
  role: 'patient' | 'doctor';
  text: string;
  badge: Badge;
}
