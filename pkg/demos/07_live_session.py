"""One human seat against three clone seats, hosted by a live session.

Drives the session objects directly (the HTTP layer in
commonpool.service wraps exactly these calls). Requires the committed
checkpoint next to this script; run checkpoints/rebuild.py if missing.
"""
import os
import tempfile

from commonpool.game import GameConfig
from commonpool.players import load_clone
from commonpool.service import SessionOptions, SessionService

HERE = os.path.dirname(os.path.abspath(__file__))
CKPT = os.path.join(HERE, "checkpoints")

members, clone_cfg = [], None
for j in range(2):
    params, clone_cfg = load_clone(os.path.join(CKPT, f"member_{j}.ckpt"))
    members.append(params)

now = [0.0]
service = SessionService(ensemble=members, clone_config=clone_cfg,
                         clock=lambda: now[0],
                         save_dir=os.path.join(tempfile.gettempdir(),
                                               "commonpool_demo_sessions"),
                         seed=99)
session = service.create_session(
    {"kind": "neural", "checkpoint": os.path.join(CKPT, "planner.ckpt")},
    GameConfig(max_rounds=10, integer_actions=True),
    SessionOptions(human_seats=1, response_seconds=20.0, overview_seconds=5.0))
token, seat = session.join(client="demo")
print(f"session {session.id}: mechanism {session.mechanism.mechanism_id}, "
      f"you are seat {seat} of 4 (3 machine seats)")
view = session.get_view(token)
print(f"instructions shown to the player open with:\n  "
      f"{view['instructions'][:70]}...\n")

# -- play: contribute a sustainable share of whatever we are offered -----

while session.phase == "awaiting_contributions":
    view = session.get_view(token)
    amount = int(view["your_offer"] / 1.4) if view["max_contribution"] else 0
    session.submit_contribution(token, amount)
    over = session.get_view(token)
    # the final round resolves straight into the questionnaire, no overview
    if over["phase"] == "overview" and over["round"] in (0, 4, 8):
        who = {row["label"]: row for row in over["players"]}
        print(f"round {over['round']}: pool {over['pool_before']:.0f} -> "
              f"{over['pool_after']:.0f}, your offer {over['your_offer']:.0f}, "
              f"you contributed {who['You']['contribution']:.0f} and kept "
              f"{who['You']['surplus']:.0f}")
    now[0] += 6.0          # sit out the overview countdown
    session.tick()

# -- the questionnaire closes the session --------------------------------

view = session.get_view(token)
print(f"\nafter round 10: phase {view['phase']}, your points "
      f"{view['your_points_total']:.1f}, bonus {view['bonus_display']}")
print(f"first of {len(view['statements'])} statements: {view['statements'][0]!r}")
session.submit_questionnaire(token, [4, 4, 3, 2, 4, 3, 2, 4])
service.tick_all()        # ended sessions persist their record to save_dir
print(f"phase {session.phase}; saved game + questionnaire under "
      f"{service.save_dir}")
