/** End-to-end: a human seat plays a real session host over HTTP.
 *
 * Spawns the Python server with the shipped demo checkpoints, plays a
 * complete game through SessionClient, and checks the numbers the
 * client rendered against the session record the server persisted —
 * strict equality on the JSON doubles, no tolerance.
 */
import { type ChildProcess, spawn } from "node:child_process";
import { existsSync, mkdtempSync, readFileSync } from "node:fs";
import net from "node:net";
import { tmpdir } from "node:os";
import { join } from "node:path";
import { fileURLToPath } from "node:url";

import { afterAll, beforeAll, describe, expect, it } from "vitest";

import { ApiRequestError, SessionClient } from "../src/client.js";
import type { View } from "../src/schema.js";

const SERVER_SCRIPT = `
import os, sys
import uvicorn
from commonpool.config import ExperimentConfig
from commonpool.service import build_app

port, work, ckpts = int(sys.argv[1]), sys.argv[2], sys.argv[3]
cfg = ExperimentConfig(seed=0, out_dir=work, bc_dir=ckpts)
app = build_app(experiment_config=cfg,
                save_dir=os.path.join(work, "sessions"), seed=2026)
uvicorn.run(app, host="127.0.0.1", port=port, log_level="warning")
`;

const repoRoot = fileURLToPath(new URL("../..", import.meta.url));
const sleep = (ms: number) => new Promise<void>((resolve) => setTimeout(resolve, ms));

function freePort(): Promise<number> {
  return new Promise((resolve, reject) => {
    const probe = net.createServer();
    probe.listen(0, "127.0.0.1", () => {
      const addr = probe.address();
      probe.close(() => {
        if (addr !== null && typeof addr === "object") resolve(addr.port);
        else reject(new Error("could not size up a free port"));
      });
    });
  });
}

async function waitForFile(path: string, timeoutMs = 10_000): Promise<void> {
  const deadline = Date.now() + timeoutMs;
  while (!existsSync(path)) {
    if (Date.now() > deadline) throw new Error(`timed out waiting for ${path}`);
    await sleep(100);
  }
}

async function errorCode(p: Promise<unknown>): Promise<string> {
  try {
    await p;
  } catch (err) {
    if (err instanceof ApiRequestError) return err.code;
    throw err;
  }
  throw new Error("expected the request to be rejected");
}

/** stream sink: every pushed view, plus waiting for one matching a picker */
class ViewLog {
  readonly views: View[] = [];
  private waiters: (() => void)[] = [];

  add(view: View): void {
    this.views.push(view);
    const ready = this.waiters;
    this.waiters = [];
    for (const wake of ready) wake();
  }

  async until<T>(
    pick: (view: View) => T | undefined,
    timeoutMs = 30_000,
  ): Promise<T> {
    const deadline = Date.now() + timeoutMs;
    let scanned = 0;
    for (;;) {
      for (; scanned < this.views.length; scanned++) {
        const got = pick(this.views[scanned] as View);
        if (got !== undefined) return got;
      }
      if (Date.now() > deadline) {
        throw new Error("timed out waiting for a matching view");
      }
      await new Promise<void>((resolve) => {
        this.waiters.push(resolve);
        setTimeout(resolve, 200);
      });
    }
  }
}

function fullGame(rounds: number): Record<string, unknown> {
  return {
    num_players: 4,
    initial_pool: 200.0,
    growth_multiplier: 1.4,
    max_rounds: rounds,
    termination: { kind: "fixed" },
    integer_actions: true,
    exclusion_threshold: 1.0,
  };
}

interface LogRound {
  t: number;
  pool_before: number;
  offers: number[];
  retained: number;
  contributions: number[];
  surpluses: number[];
  pool_after: number;
}

function readSessionLog(path: string): { header: Record<string, unknown>; rounds: LogRound[] } {
  const lines = readFileSync(path, "utf8").trim().split("\n");
  return {
    header: JSON.parse(lines[0] as string) as Record<string, unknown>,
    rounds: lines.slice(1).map((line) => JSON.parse(line) as LogRound),
  };
}

describe("live session host", () => {
  let server: ChildProcess | null = null;
  let serverErr = "";
  let base = "";
  let saveDir = "";

  beforeAll(async () => {
    const port = await freePort();
    base = `http://127.0.0.1:${port}`;
    const work = mkdtempSync(join(tmpdir(), "commonpool-client-"));
    saveDir = join(work, "sessions");
    const checkpoints = join(repoRoot, "demos", "checkpoints");
    server = spawn(
      "python3",
      ["-c", SERVER_SCRIPT, String(port), work, checkpoints],
      { stdio: ["ignore", "ignore", "pipe"] },
    );
    server.stderr?.on("data", (chunk: Buffer) => {
      serverErr += String(chunk);
    });
    const deadline = Date.now() + 45_000;
    for (;;) {
      if (server.exitCode !== null) {
        throw new Error(`server exited early:\n${serverErr}`);
      }
      try {
        const resp = await fetch(`${base}/admin/sessions`);
        if (resp.ok) break;
      } catch {
        // not listening yet
      }
      if (Date.now() > deadline) {
        throw new Error(`server never came up:\n${serverErr}`);
      }
      await sleep(200);
    }
  }, 60_000);

  afterAll(() => {
    server?.kill("SIGKILL");
  });

  it(
    "plays a 10-round game against the shipped policy and matches the record",
    async () => {
      const { client, created } = await SessionClient.create(base, {
        mechanism: {
          kind: "neural",
          checkpoint: join(repoRoot, "demos", "checkpoints", "planner.ckpt"),
        },
        game: fullGame(10),
        human_seats: 1,
        response_seconds: 30,
        overview_seconds: 0.2,
      });
      expect(created.mechanism_id).toMatch(/^planner\(/);
      expect(created.instructions).toBeTruthy();

      await client.join("integration");
      const me = client.seat as number;
      const log = new ViewLog();
      const streamDone = client.stream((view) => log.add(view));

      const submitted: number[] = [];
      for (let r = 0; r < 10; r++) {
        const view = await log.until((v) =>
          v.phase === "awaiting_contributions" && v.round === r && !v.submitted
            ? v
            : undefined,
        );
        expect(view.max_contribution).toBe(Math.floor(view.your_offer ?? 0));
        const max = view.max_contribution ?? 0;
        const amount = Math.min(max, (r * 7 + 3) % (max + 1));
        submitted.push(amount);
        await client.stage(amount);
        const ack = await client.submitContribution(amount);
        expect(ack.recorded).toBe(amount);
      }

      // the final round resolves straight into the questionnaire, so an
      // overview screen exists for rounds 0..8; the last round is checked
      // against the persisted record and the final totals below
      const overviews: View[] = [];
      for (let r = 0; r < 9; r++) {
        overviews.push(
          await log.until((v) =>
            v.phase === "overview" && v.round === r ? v : undefined,
          ),
        );
      }

      const ratings = [5, 4, 3, 2, 1, 2, 3, 4];
      const qview = await log.until((v) =>
        v.phase === "questionnaire" ? v : undefined,
      );
      expect(qview.statements).toHaveLength(8);
      expect(qview.scale).toEqual([1, 2, 3, 4, 5]);
      await client.submitQuestionnaire(ratings);
      const last = await streamDone;
      expect(last?.phase).toBe("ended");

      // now the server's own record of the same game, straight off disk
      const logPath = join(saveDir, `session_${client.sessionId}_game0.log`);
      await waitForFile(logPath);
      const record = readSessionLog(logPath);
      expect(record.header["mechanism_id"]).toBe(created.mechanism_id);
      expect(record.rounds).toHaveLength(10);

      const totals = [0, 0, 0, 0];
      for (let r = 0; r < 9; r++) {
        const rec = record.rounds[r] as LogRound;
        const view = overviews[r] as View;
        expect(rec.t).toBe(r);
        expect(view.round).toBe(r);
        // the client never computes outcomes, so every number it showed
        // must equal the recorded double exactly
        expect(view.pool_before).toBe(rec.pool_before);
        expect(view.pool_after).toBe(rec.pool_after);
        expect(view.retained_by_manager).toBe(rec.retained);
        expect(view.your_offer).toBe(rec.offers[me]);
        expect(rec.contributions[me]).toBe(submitted[r]);
        const players = view.players as NonNullable<View["players"]>;
        expect(players).toHaveLength(4);
        for (let s = 0; s < 4; s++) {
          totals[s] = (totals[s] as number) + (rec.surpluses[s] as number);
        }
        for (let rank = 0; rank < 4; rank++) {
          const seat = (me + rank) % 4;
          const row = players[rank] as NonNullable<View["players"]>[number];
          expect(row.label).toBe(rank === 0 ? "You" : String(rank + 1));
          expect(row.offer).toBe(rec.offers[seat]);
          expect(row.contribution).toBe(rec.contributions[seat]);
          expect(row.surplus).toBe(rec.surpluses[seat]);
          // running totals are displayed rounded to a hundredth
          expect(Math.abs(row.kept_total - (totals[seat] as number)))
            .toBeLessThanOrEqual(0.0051);
        }
      }

      // last round: what the server recorded is what this client submitted,
      // and the closing screen's point total is the recorded surplus sum
      const rec9 = record.rounds[9] as LogRound;
      expect(rec9.t).toBe(9);
      expect(rec9.contributions[me]).toBe(submitted[9]);
      for (let s = 0; s < 4; s++) {
        totals[s] = (totals[s] as number) + (rec9.surpluses[s] as number);
      }
      expect(Math.abs((qview.your_points_total ?? 0) - (totals[me] as number)))
        .toBeLessThanOrEqual(0.0051);

      const meta = JSON.parse(
        readFileSync(join(saveDir, `session_${client.sessionId}.meta.json`), "utf8"),
      ) as Record<string, unknown>;
      expect(meta["mechanism_id"]).toBe(created.mechanism_id);
      expect(meta["instruction_key"]).toBe("rl_agent");
      expect(meta["dropout"]).toBe(false);
      expect(meta["games_completed"]).toBe(1);
      const questionnaires = meta["questionnaires"] as Record<string, number[]>;
      expect(questionnaires[String(me)]).toEqual(ratings);
    },
    90_000,
  );

  it(
    "records the staged value on a first timeout and benches the seat on a second",
    async () => {
      const { client } = await SessionClient.create(base, {
        mechanism: { kind: "equal" },
        game: fullGame(3),
        human_seats: 1,
        questionnaire: false,
        response_seconds: 2.0,
        overview_seconds: 0.2,
      });
      await client.join("sleepy");
      const me = client.seat as number;
      const log = new ViewLog();
      const streamDone = client.stream((view) => log.add(view));

      await log.until((v) =>
        v.phase === "awaiting_contributions" && v.round === 0 ? v : undefined,
      );
      await client.stage(2);
      // no submit: the deadline passes and the staged value counts
      const ov0 = await log.until(
        (v) => (v.phase === "overview" && v.round === 0 ? v : undefined),
        15_000,
      );
      expect(ov0.players?.[0]?.contribution).toBe(2);

      // round 1: silence again; the server hands the seat to a bot and the
      // game plays itself out while this (former) player keeps watching
      const last = await streamDone;
      expect(last?.phase).toBe("ended");

      const metaPath = join(saveDir, `session_${client.sessionId}.meta.json`);
      await waitForFile(metaPath);
      const meta = JSON.parse(readFileSync(metaPath, "utf8")) as Record<string, unknown>;
      expect(meta["dropout"]).toBe(true);
      expect((meta["timeouts"] as number[])[me]).toBe(2);
      expect((meta["final_seat_kinds"] as string[])[me]).toBe("bot");
      const events = (meta["events"] as { event: string }[]).map((e) => e.event);
      expect(events).toContain("timeout_recorded_staged");
      expect(events).toContain("seat_dropped");

      const record = readSessionLog(
        join(saveDir, `session_${client.sessionId}_game0.log`),
      );
      expect(record.rounds).toHaveLength(3);
      expect(record.rounds[0]?.contributions[me]).toBe(2);
    },
    60_000,
  );

  it(
    "rejects fractional, out-of-range, and repeated inputs server-side",
    async () => {
      const { client } = await SessionClient.create(base, {
        mechanism: { kind: "equal" },
        game: fullGame(1),
        human_seats: 1,
        response_seconds: 30,
        overview_seconds: 0.1,
      });
      await client.join("fussy");
      const log = new ViewLog();
      const streamDone = client.stream((view) => log.add(view));
      const v0 = await log.until((v) =>
        v.phase === "awaiting_contributions" ? v : undefined,
      );
      const max = v0.max_contribution ?? 0;
      expect(max).toBeGreaterThan(2);

      expect(await errorCode(client.submitContribution(2.5))).toBe("OutOfRange");
      expect(await errorCode(client.submitContribution(-1))).toBe("OutOfRange");
      expect(await errorCode(client.submitContribution(max + 1))).toBe("OutOfRange");
      expect(await errorCode(client.stage(3.7))).toBe("OutOfRange");

      await client.submitContribution(2);
      expect(await errorCode(client.submitContribution(0))).toBe("WrongPhase");

      await log.until((v) => (v.phase === "questionnaire" ? v : undefined));
      expect(await errorCode(client.submitQuestionnaire([1, 2, 3]))).toBe("BadRating");
      expect(await errorCode(client.submitQuestionnaire([0, 1, 1, 1, 1, 1, 1, 1])))
        .toBe("BadRating");
      await client.submitQuestionnaire([1, 1, 1, 1, 1, 1, 1, 1]);
      expect(await errorCode(client.submitQuestionnaire([1, 1, 1, 1, 1, 1, 1, 1])))
        .toBe("WrongPhase");
      const last = await streamDone;
      expect(last?.phase).toBe("ended");
    },
    60_000,
  );
});
