/** Hand-built server views for the unit tests. */
import type { PlayerRow, View } from "../src/schema.js";

export function rows(withResults = false): PlayerRow[] {
  const base: PlayerRow[] = [
    { label: "You", offer: 50, prev_contribution: null, kept_total: 0 },
    { label: "2", offer: 50, prev_contribution: null, kept_total: 0 },
    { label: "3", offer: 50, prev_contribution: null, kept_total: 0 },
    { label: "4", offer: 50, prev_contribution: null, kept_total: 0 },
  ];
  if (!withResults) return base;
  const contribs = [14, 0, 0, 28];
  const surpluses = [36, 50, 50, 22];
  return base.map((row, i) => ({
    ...row,
    contribution: contribs[i] ?? 0,
    surplus: surpluses[i] ?? 0,
    kept_total: surpluses[i] ?? 0,
  }));
}

export function makeView(overrides: Partial<View> = {}): View {
  return {
    schema_version: "1",
    session_id: "0000-abcd",
    phase: "awaiting_contributions",
    game_index: 0,
    games_in_series: 1,
    seat: 0,
    remaining_seconds: 20,
    bonus_rate: 0.008,
    growth_rate: 0.4,
    instructions: null,
    round: 0,
    players: rows(),
    pool_before: 200,
    retained_by_manager: 0,
    your_offer: 50,
    max_contribution: 50,
    staged: null,
    submitted: false,
    your_points_total: 0,
    bonus_display: "£0.00",
    ...overrides,
  };
}

export const STATEMENTS = [
  "statement one",
  "statement two",
  "statement three",
  "statement four",
  "statement five",
  "statement six",
  "statement seven",
  "statement eight",
];

export function questionnaireView(overrides: Partial<View> = {}): View {
  return makeView({
    phase: "questionnaire",
    remaining_seconds: 0,
    statements: [...STATEMENTS],
    scale: [1, 2, 3, 4, 5],
    answered: false,
    your_points_total: 36,
    bonus_display: "£0.29",
    round: undefined,
    players: undefined,
    pool_before: undefined,
    your_offer: undefined,
    max_contribution: undefined,
    staged: undefined,
    submitted: undefined,
    ...overrides,
  });
}
