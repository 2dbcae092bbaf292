/** Browser bootstrap: join form, then stream -> state -> render loop. */
import { SessionClient } from "./client.js";
import { render } from "./render.js";
import { RoundState } from "./state.js";

function el<T extends HTMLElement>(root: ParentNode, selector: string): T | null {
  return root.querySelector(selector) as T | null;
}

async function runSession(
  app: HTMLElement,
  client: SessionClient,
  name: string,
): Promise<void> {
  await client.join(name || undefined);
  const state = new RoundState();

  const repaint = () => {
    app.innerHTML = render(state, Date.now());
  };

  // local countdown between server messages; poll once when it expires so
  // the server sweeps its deadline even if no push arrives
  let polledForDeadline = false;
  setInterval(() => {
    if (state.view === null) return;
    const node = el<HTMLElement>(app, "[data-countdown]");
    const left = Math.max(
      0,
      state.view.remaining_seconds - (Date.now() - state.receivedAtMs) / 1000,
    );
    if (node !== null) node.textContent = `${Math.ceil(left)}s to respond`;
    if (left <= 0 && !polledForDeadline && state.view.phase !== "ended") {
      polledForDeadline = true;
      client
        .view()
        .then((v) => {
          state.apply(v, Date.now());
          repaint();
        })
        .catch(() => undefined)
        .finally(() => {
          polledForDeadline = false;
        });
    }
  }, 250);

  app.addEventListener("input", (ev) => {
    const target = ev.target as HTMLElement;
    if (target.dataset["action"] === "slider") {
      state.setSlider(Number((target as HTMLInputElement).value));
      const label = el<HTMLElement>(app, ".slider-value");
      if (label !== null) label.textContent = String(state.slider);
    }
  });
  app.addEventListener("change", (ev) => {
    const target = ev.target as HTMLElement;
    if (target.dataset["action"] === "slider") {
      client.stage(state.slider).catch(() => undefined);
      repaint();
    }
    if (target.dataset["action"] === "rate" && state.questionnaire !== null) {
      const input = target as HTMLInputElement;
      state.questionnaire.rate(Number(input.dataset["statement"]), Number(input.value));
      repaint();
    }
  });
  app.addEventListener("click", (ev) => {
    const target = (ev.target as HTMLElement).closest("button");
    if (target === null) return;
    if (target.dataset["action"] === "submit") {
      // the stream pushes the post-submit view; refresh once regardless so
      // the button locks even if that push is briefly delayed
      client
        .submitContribution(state.slider)
        .then(() => client.view())
        .then((v) => {
          state.apply(v, Date.now());
          repaint();
        })
        .catch((err) => alert(String(err)));
    }
    if (
      target.dataset["action"] === "submit-questionnaire" &&
      state.questionnaire !== null &&
      state.questionnaire.submittable
    ) {
      const q = state.questionnaire;
      client
        .submitQuestionnaire(q.toPayload())
        .then(() => {
          q.submitted = true;
          return client.view();
        })
        .then((v) => {
          state.apply(v, Date.now());
          repaint();
        })
        .catch((err) => alert(String(err)));
    }
  });

  for (;;) {
    try {
      const last = await client.stream((view) => {
        state.apply(view, Date.now());
        repaint();
      });
      if (last?.phase === "ended") return;
    } catch {
      app.insertAdjacentHTML(
        "afterbegin",
        `<p class="banner">Connection lost — retrying…</p>`,
      );
      await new Promise((resolve) => setTimeout(resolve, 1000));
    }
  }
}

export function boot(): void {
  const app = el<HTMLElement>(document, "#app");
  if (app === null) return;
  app.innerHTML = `
<section class="join">
  <h1>Flower-field game</h1>
  <form data-form="join">
    <label>Server <input name="base" value="${location.origin}" /></label>
    <label>Session id (blank: start a practice session)
      <input name="session" /></label>
    <label>Your name <input name="name" /></label>
    <button type="submit">Join</button>
  </form>
</section>`;
  const form = el<HTMLFormElement>(app, "form[data-form=join]");
  form?.addEventListener("submit", (ev) => {
    ev.preventDefault();
    const data = new FormData(form);
    const base = String(data.get("base") ?? location.origin).replace(/\/$/, "");
    const sid = String(data.get("session") ?? "").trim();
    const name = String(data.get("name") ?? "").trim();
    const start = sid
      ? Promise.resolve(new SessionClient(base, sid))
      : SessionClient.create(base, { human_seats: 1 }).then((r) => r.client);
    start
      .then((client) => runSession(app, client, name))
      .catch((err) => alert(String(err)));
  });
}

if (typeof document !== "undefined" && document.readyState !== "loading") {
  boot();
} else if (typeof document !== "undefined") {
  document.addEventListener("DOMContentLoaded", boot);
}
