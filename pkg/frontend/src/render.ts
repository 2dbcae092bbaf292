/** HTML renderers: pure view + interaction state in, markup out.
 *
 * Every game number comes from the server view, formatted to two
 * decimals for display. Interactive elements carry data-action
 * attributes; the bootstrap layer wires them to client calls.
 */
import type { PlayerRow, View } from "./schema.js";
import {
  countdownSeconds,
  inputsDisabled,
  type QuestionnaireState,
  type RoundState,
  sliderTexts,
} from "./state.js";

export function escapeHtml(s: string): string {
  return s
    .replace(/&/g, "&amp;")
    .replace(/</g, "&lt;")
    .replace(/>/g, "&gt;")
    .replace(/"/g, "&quot;")
    .replace(/'/g, "&#39;");
}

const fmt = (x: number | null | undefined): string =>
  x === null || x === undefined ? "—" : x.toFixed(2);

function instructionsBlock(view: View): string {
  if (!view.instructions) return "";
  return `<section class="instructions"><p>${escapeHtml(view.instructions)}</p></section>`;
}

export function renderLobby(view: View): string {
  const joined = view.joined ?? 0;
  const needed = view.needed ?? 0;
  return `
<section class="lobby">
  <h1>Waiting for players</h1>
  <p class="lobby-count">${joined} of ${needed} seats filled</p>
  ${instructionsBlock(view)}
</section>`;
}

function playerTable(rows: PlayerRow[], withResults: boolean): string {
  const head = withResults
    ? "<tr><th>Player</th><th>Offered</th><th>Re-invested</th><th>Kept this round</th><th>Total kept</th></tr>"
    : "<tr><th>Player</th><th>Offered</th><th>Re-invested last round</th><th>Total kept</th></tr>";
  const body = rows
    .map((row) => {
      const you = row.label === "You" ? ' class="you"' : "";
      const cells = withResults
        ? `<td>${fmt(row.offer)}</td><td>${fmt(row.contribution)}</td>` +
          `<td>${fmt(row.surplus)}</td><td>${fmt(row.kept_total)}</td>`
        : `<td>${fmt(row.offer)}</td><td>${fmt(row.prev_contribution)}</td>` +
          `<td>${fmt(row.kept_total)}</td>`;
      return `<tr${you}><td>${escapeHtml(row.label)}</td>${cells}</tr>`;
    })
    .join("");
  return `<table class="players">${head}${body}</table>`;
}

export function renderRound(state: RoundState, nowMs: number): string {
  const view = state.view;
  if (view === null) return "";
  const disabled = inputsDisabled(view, state.receivedAtMs, nowMs);
  const texts = sliderTexts(view, state.slider);
  const max = view.max_contribution ?? 0;
  const locked = max <= 0;
  const seconds = Math.ceil(countdownSeconds(view, state.receivedAtMs, nowMs));
  const submittedNote = view.submitted
    ? `<p class="submitted-note">Submitted: waiting for the other players.</p>`
    : disabled
      ? `<p class="submitted-note">Time is up — your slider value ${fmt(
          view.staged ?? state.slider,
        )} counts as submitted.</p>`
      : "";
  return `
<section class="round">
  <h1>Round ${(view.round ?? 0) + 1}</h1>
  <p class="pool">Flower field: ${fmt(view.pool_before)} flowers</p>
  <p class="offer">You were offered <strong>${fmt(view.your_offer)}</strong> coins.</p>
  ${playerTable(view.players ?? [], false)}
  <p class="countdown" data-countdown>${seconds}s to respond</p>
  <div class="slider-block">
    <label for="slider">How much do you want to re-invest?</label>
    <input type="range" id="slider" data-action="slider" min="0" max="${max}"
      step="1" value="${state.slider}" ${disabled || locked ? "disabled" : ""} />
    <span class="slider-value">${state.slider}</span>
    <p class="growth-note">Re-investing ${texts.reinvest} coins grows the field
      by ${texts.fieldGrowth} flowers.</p>
    <button data-action="submit" ${disabled ? "disabled" : ""}>
      ${escapeHtml(texts.button)}</button>
  </div>
  ${submittedNote}
  <p class="totals">Your total points: ${fmt(view.your_points_total)} →
    bonus: ${escapeHtml(view.bonus_display ?? "")}</p>
</section>`;
}

export function renderOverview(view: View): string {
  return `
<section class="overview">
  <h1>Here is what happened this round</h1>
  <p class="pool">Flower field: ${fmt(view.pool_before)} →
    ${fmt(view.pool_after)} flowers</p>
  ${playerTable(view.players ?? [], true)}
  <p class="totals">Your total points: ${fmt(view.your_points_total)} →
    bonus: ${escapeHtml(view.bonus_display ?? "")}</p>
</section>`;
}

export function renderQuestionnaire(
  view: View,
  q: QuestionnaireState | null,
): string {
  const statements = view.statements ?? [];
  const scale = view.scale ?? [1, 2, 3, 4, 5];
  const items = statements
    .map((statement, i) => {
      const buttons = scale
        .map((v) => {
          const checked = q !== null && q.ratings[i] === v ? "checked" : "";
          return `<label><input type="radio" name="q${i}" value="${v}"
            data-action="rate" data-statement="${i}" ${checked} /> ${v}</label>`;
        })
        .join(" ");
      return `<li><p>${escapeHtml(statement)}</p><div class="scale">${buttons}</div></li>`;
    })
    .join("");
  const submittable = q !== null && q.submittable && !view.answered;
  return `
<section class="questionnaire">
  <h1>Before you go</h1>
  <p>Please rate your agreement with each statement (1 = strongly
    disagree, 5 = strongly agree).</p>
  <ol>${items}</ol>
  <button data-action="submit-questionnaire" ${submittable ? "" : "disabled"}>
    Submit answers</button>
  <p class="totals">Your total points: ${fmt(view.your_points_total)} →
    bonus: ${escapeHtml(view.bonus_display ?? "")}</p>
</section>`;
}

export function renderEnded(view: View): string {
  return `
<section class="ended">
  <h1>Thanks for playing</h1>
  <p class="totals">Your total points: ${fmt(view.your_points_total)} →
    bonus: ${escapeHtml(view.bonus_display ?? "")}</p>
</section>`;
}

export function render(state: RoundState, nowMs: number): string {
  const view = state.view;
  if (view === null) return `<section class="lobby"><h1>Connecting…</h1></section>`;
  switch (view.phase) {
    case "lobby":
      return renderLobby(view);
    case "awaiting_contributions":
      return renderRound(state, nowMs);
    case "overview":
      return renderOverview(view);
    case "questionnaire":
      return view.answered
        ? renderEnded(view)
        : renderQuestionnaire(view, state.questionnaire);
    case "ended":
      return renderEnded(view);
  }
}
