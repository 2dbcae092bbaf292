/** Local interaction state layered over server views.
 *
 * The only numbers originating here are the player's own inputs (slider
 * position, questionnaire ratings) and texts derived from those inputs
 * using rates the server provides. Everything else renders straight
 * from the view.
 */
import type { View } from "./schema.js";

export function clampSlider(value: number, view: View): number {
  const max = view.max_contribution ?? 0;
  if (!Number.isFinite(value)) return 0;
  return Math.min(max, Math.max(0, Math.round(value)));
}

export interface SliderTexts {
  reinvest: string;
  payYourself: string;
  /** what the field gains from the re-investment, at the configured growth */
  fieldGrowth: string;
  button: string;
}

export function sliderTexts(view: View, slider: number): SliderTexts {
  const offer = view.your_offer ?? 0;
  const grown = slider * (1.0 + view.growth_rate);
  const reinvest = slider.toFixed(2);
  const payYourself = (offer - slider).toFixed(2);
  return {
    reinvest,
    payYourself,
    fieldGrowth: grown.toFixed(2),
    button: `Re-invest ${reinvest} coins / pay yourself ${payYourself} coins`,
  };
}

/** seconds left to display, ticking locally between server messages */
export function countdownSeconds(
  view: View,
  receivedAtMs: number,
  nowMs: number,
): number {
  const elapsed = Math.max(0, (nowMs - receivedAtMs) / 1000);
  return Math.max(0, view.remaining_seconds - elapsed);
}

export function inputsDisabled(
  view: View,
  receivedAtMs: number,
  nowMs: number,
): boolean {
  if (view.phase !== "awaiting_contributions") return true;
  if (view.submitted) return true;
  return countdownSeconds(view, receivedAtMs, nowMs) <= 0;
}

export class QuestionnaireState {
  readonly ratings: (number | null)[];
  submitted = false;

  constructor(statementCount: number) {
    this.ratings = new Array<number | null>(statementCount).fill(null);
  }

  rate(index: number, rating: number): void {
    if (index < 0 || index >= this.ratings.length) return;
    if (!Number.isInteger(rating) || rating < 1 || rating > 5) return;
    this.ratings[index] = rating;
  }

  get complete(): boolean {
    return this.ratings.every((r) => r !== null);
  }

  get submittable(): boolean {
    return this.complete && !this.submitted;
  }

  toPayload(): number[] {
    if (!this.complete) throw new Error("answer every statement first");
    return this.ratings.map((r) => r as number);
  }
}

/** one session's worth of UI state, updated by views in arrival order */
export class RoundState {
  view: View | null = null;
  receivedAtMs = 0;
  slider = 0;
  questionnaire: QuestionnaireState | null = null;

  apply(view: View, nowMs: number): void {
    const prevRound = this.view?.round;
    this.view = view;
    this.receivedAtMs = nowMs;
    if (view.phase === "awaiting_contributions") {
      if (view.round !== prevRound) {
        // fresh round: pick up whatever the server says is staged
        this.slider = clampSlider(view.staged ?? 0, view);
      } else {
        this.slider = clampSlider(this.slider, view);
      }
    }
    if (
      (view.phase === "questionnaire" || view.phase === "ended") &&
      this.questionnaire === null &&
      view.statements !== undefined
    ) {
      this.questionnaire = new QuestionnaireState(view.statements.length);
    }
  }

  setSlider(value: number): void {
    if (this.view !== null) this.slider = clampSlider(value, this.view);
  }
}
