/** Server payload shapes, mirrored field for field.
 *
 * The server is authoritative for every number shown to the player; the
 * client renders these payloads and never derives game outcomes itself.
 */

export type Phase =
  | "lobby"
  | "awaiting_contributions"
  | "overview"
  | "questionnaire"
  | "ended";

export interface PlayerRow {
  /** "You" for the viewer's own seat, otherwise a clockwise rank label. */
  label: string;
  offer: number;
  prev_contribution: number | null;
  kept_total: number;
  // overview only
  contribution?: number;
  surplus?: number;
}

export interface View {
  schema_version: string;
  session_id: string;
  phase: Phase;
  game_index: number;
  games_in_series: number;
  seat: number;
  remaining_seconds: number;
  bonus_rate: number;
  /** growth multiplier minus one; the "re-invest grows by" annotation rate */
  growth_rate: number;
  instructions: string | null;

  // lobby
  joined?: number;
  needed?: number;

  // questionnaire / ended
  statements?: string[];
  scale?: number[];
  answered?: boolean;

  // playing phases
  round?: number;
  players?: PlayerRow[];
  pool_before?: number;
  pool_after?: number;
  retained_by_manager?: number;
  your_offer?: number;
  max_contribution?: number;
  staged?: number | null;
  submitted?: boolean;
  your_points_total?: number;
  bonus_display?: string;
}

export interface CreateSessionResponse {
  schema_version: string;
  session_id: string;
  mechanism_id: string;
  instructions: string | null;
  phase: Phase;
}

export interface JoinResponse {
  token: string;
  seat: number;
  phase: Phase;
}

/** contribution submissions echo the integer the server recorded */
export interface SubmitAck {
  ok: boolean;
  recorded: number;
}

export interface OkAck {
  ok: boolean;
}

export interface ApiError {
  error: string;
  detail: string;
}
