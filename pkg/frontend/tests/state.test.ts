import { describe, expect, it } from "vitest";

import {
  QuestionnaireState,
  RoundState,
  clampSlider,
  countdownSeconds,
  inputsDisabled,
  sliderTexts,
} from "../src/state.js";
import { makeView, questionnaireView } from "./fixtures.js";

describe("clampSlider", () => {
  const view = makeView({ max_contribution: 50 });

  it("keeps whole units inside [0, max]", () => {
    expect(clampSlider(14, view)).toBe(14);
    expect(clampSlider(0, view)).toBe(0);
    expect(clampSlider(50, view)).toBe(50);
  });

  it("rounds fractional drags to the nearest step", () => {
    expect(clampSlider(13.6, view)).toBe(14);
    expect(clampSlider(13.4, view)).toBe(13);
  });

  it("clamps out-of-range values", () => {
    expect(clampSlider(-3, view)).toBe(0);
    expect(clampSlider(99, view)).toBe(50);
  });

  it("treats garbage and missing maxima as zero", () => {
    expect(clampSlider(Number.NaN, view)).toBe(0);
    expect(clampSlider(Number.POSITIVE_INFINITY, view)).toBe(0);
    expect(clampSlider(10, makeView({ max_contribution: undefined }))).toBe(0);
  });

  it("pins everything to zero for an excluded seat", () => {
    const excluded = makeView({ your_offer: 0.5, max_contribution: 0 });
    expect(clampSlider(5, excluded)).toBe(0);
  });
});

describe("sliderTexts", () => {
  it("splits the offer into re-invest and pay-yourself parts", () => {
    const texts = sliderTexts(makeView({ your_offer: 50, growth_rate: 0.4 }), 14);
    expect(texts.reinvest).toBe("14.00");
    expect(texts.payYourself).toBe("36.00");
    expect(texts.button).toBe(
      "Re-invest 14.00 coins / pay yourself 36.00 coins",
    );
  });

  it("annotates growth at the server-provided rate", () => {
    const texts = sliderTexts(makeView({ your_offer: 50, growth_rate: 0.4 }), 14);
    expect(texts.fieldGrowth).toBe("19.60");
  });

  it("tracks the slider at the extremes", () => {
    const view = makeView({ your_offer: 50, growth_rate: 0.4 });
    expect(sliderTexts(view, 0)).toMatchObject({
      reinvest: "0.00",
      payYourself: "50.00",
      fieldGrowth: "0.00",
    });
    expect(sliderTexts(view, 50)).toMatchObject({
      reinvest: "50.00",
      payYourself: "0.00",
      fieldGrowth: "70.00",
    });
  });
});

describe("countdown", () => {
  const view = makeView({ remaining_seconds: 20 });

  it("ticks down locally between server messages", () => {
    expect(countdownSeconds(view, 1000, 1000)).toBe(20);
    expect(countdownSeconds(view, 1000, 6000)).toBe(15);
  });

  it("never goes negative", () => {
    expect(countdownSeconds(view, 1000, 60_000)).toBe(0);
  });

  it("ignores a clock that appears to run backwards", () => {
    expect(countdownSeconds(view, 5000, 1000)).toBe(20);
  });
});

describe("inputsDisabled", () => {
  it("is live while the response window is open", () => {
    expect(inputsDisabled(makeView(), 1000, 2000)).toBe(false);
  });

  it("locks after submission", () => {
    expect(inputsDisabled(makeView({ submitted: true }), 1000, 2000)).toBe(true);
  });

  it("locks when the window expires", () => {
    expect(inputsDisabled(makeView(), 1000, 22_000)).toBe(true);
  });

  it("locks outside the contribution phase", () => {
    expect(inputsDisabled(makeView({ phase: "overview" }), 1000, 1000)).toBe(
      true,
    );
  });
});

describe("QuestionnaireState", () => {
  it("requires an answer to every statement before submitting", () => {
    const q = new QuestionnaireState(8);
    expect(q.complete).toBe(false);
    expect(q.submittable).toBe(false);
    for (let i = 0; i < 7; i++) q.rate(i, 3);
    expect(q.complete).toBe(false);
    q.rate(7, 5);
    expect(q.complete).toBe(true);
    expect(q.submittable).toBe(true);
  });

  it("rejects ratings off the 1..5 integer scale", () => {
    const q = new QuestionnaireState(2);
    q.rate(0, 0);
    q.rate(0, 6);
    q.rate(0, 2.5);
    expect(q.ratings[0]).toBeNull();
    q.rate(0, 1);
    q.rate(1, 5);
    expect(q.ratings).toEqual([1, 5]);
  });

  it("ignores out-of-range statement indices", () => {
    const q = new QuestionnaireState(2);
    q.rate(-1, 3);
    q.rate(2, 3);
    expect(q.ratings).toEqual([null, null]);
  });

  it("cannot be submitted twice", () => {
    const q = new QuestionnaireState(1);
    q.rate(0, 4);
    expect(q.submittable).toBe(true);
    q.submitted = true;
    expect(q.submittable).toBe(false);
  });

  it("refuses to build an incomplete payload", () => {
    const q = new QuestionnaireState(2);
    q.rate(0, 3);
    expect(() => q.toPayload()).toThrow();
    q.rate(1, 3);
    expect(q.toPayload()).toEqual([3, 3]);
  });
});

describe("RoundState", () => {
  it("keeps the local slider position across same-round updates", () => {
    const state = new RoundState();
    state.apply(makeView(), 1000);
    state.setSlider(14);
    state.apply(makeView({ staged: 14 }), 2000);
    expect(state.slider).toBe(14);
  });

  it("re-syncs the slider from the staged value on a new round", () => {
    const state = new RoundState();
    state.apply(makeView({ round: 0 }), 1000);
    state.setSlider(30);
    state.apply(makeView({ round: 1, staged: 7 }), 2000);
    expect(state.slider).toBe(7);
  });

  it("re-clamps when the next round offers less", () => {
    const state = new RoundState();
    state.apply(makeView({ round: 0, max_contribution: 50 }), 1000);
    state.setSlider(40);
    state.apply(
      makeView({ round: 1, staged: null, your_offer: 12, max_contribution: 12 }),
      2000,
    );
    expect(state.slider).toBe(0); // nothing staged yet in the fresh round
    state.setSlider(40);
    expect(state.slider).toBe(12);
  });

  it("builds questionnaire state once statements arrive", () => {
    const state = new RoundState();
    state.apply(makeView(), 1000);
    expect(state.questionnaire).toBeNull();
    state.apply(questionnaireView(), 2000);
    expect(state.questionnaire?.ratings).toHaveLength(8);
    const q = state.questionnaire;
    state.apply(questionnaireView(), 3000);
    expect(state.questionnaire).toBe(q); // same state across repaints
  });

  it("ignores slider input before the first view", () => {
    const state = new RoundState();
    state.setSlider(10);
    expect(state.slider).toBe(0);
  });
});
