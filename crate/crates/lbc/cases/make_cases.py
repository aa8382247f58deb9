"""Regenerates lbc_cases.json.

Expected values come from a separate Python implementation that works with
rotation matrices instead of quaternion closed forms. Values that can be
worked out by hand are asserted against the hand result before writing.
"""
import json
import math
from pathlib import Path

SIG = dict(lin_vel=0.25, ang_vel=0.25, height=0.1, roll=0.25, pitch=0.25, yaw=0.25)
W = dict(lin_vel=1.0, ang_vel=1.0, height=1.0, roll=1.0, pitch=1.0, yaw=1.0, energy=-0.001,
         action_rate=-0.01, joint_acc=-2.5e-7, vertical_vel=-1.0, roll_pitch_rate=-0.15,
         undesired_contacts=-1.0, feet_slide=-0.25, flying=-1.0, feet_force=-0.003,
         feet_air_time=0.15, feet_stumble=-2.0, torso_orientation=-2.0, joint_limits=-2.0,
         flat_orientation=-1.0, feet_distance=-2.0, termination=-200.0)
GROUPS = {"hip_roll_yaw": ([1, 2, 7, 8], -0.1), "waist": ([12, 13, 14], -0.2),
          "legs": ([0, 3, 4, 5, 6, 9, 10, 11], -0.02)}
N = 15


def qmul(a, b):
    w1, x1, y1, z1 = a
    w2, x2, y2, z2 = b
    return [w1*w2 - x1*x2 - y1*y2 - z1*z2, w1*x2 + x1*w2 + y1*z2 - z1*y2,
            w1*y2 - x1*z2 + y1*w2 + z1*x2, w1*z2 + x1*y2 - y1*x2 + z1*w2]


def quat_xyz(r, p, y):
    ax = lambda axis, a: [math.cos(a/2)] + [c*math.sin(a/2) for c in axis]
    return qmul(qmul(ax([1, 0, 0], r), ax([0, 1, 0], p)), ax([0, 0, 1], y))


def rotate(q, v):
    conj = [q[0], -q[1], -q[2], -q[3]]
    return qmul(qmul(q, [0.0] + list(v)), conj)[1:]


def matrix(q):
    cols = [rotate(q, e) for e in ([1, 0, 0], [0, 1, 0], [0, 0, 1])]
    return [[cols[j][i] for j in range(3)] for i in range(3)]


def euler_xyz(q):
    m = matrix(q)
    pitch = math.asin(max(-1.0, min(1.0, m[0][2])))
    roll = math.atan2(-m[1][2], m[2][2])
    yaw = math.atan2(-m[0][1], m[0][0])
    return roll, pitch, yaw


def wrap(a):
    r = math.fmod(a + math.pi, 2*math.pi)
    if r <= 0:
        r += 2*math.pi
    return r - math.pi


def state(**kw):
    s = dict(base_lin_vel=[0.0]*3, base_ang_vel=[0.0]*3, projected_gravity=[0.0, 0.0, -1.0],
             q=[0.0]*N, qd=[0.0]*N, qdd=[0.0]*N, torque=[0.0]*N, action=[0.0]*N,
             prev_action=[0.0]*N, q_default=[0.0]*N, base_height=0.75,
             torso_quat=[1.0, 0, 0, 0], pelvis_quat=[1.0, 0, 0, 0],
             feet=[dict(contact=True, force=[0.0]*3, velocity_xy=[0.0]*2, position=[0.0, 0.1, 0.0], air_time=0.0),
                   dict(contact=True, force=[0.0]*3, velocity_xy=[0.0]*2, position=[0.0, -0.1, 0.0], air_time=0.0)],
             body_contact_forces=[], terminated=False)
    s.update(kw)
    return s


def command(**kw):
    c = dict(vx=0.0, vy=0.0, wz=0.0, height=0.75, roll=0.0, pitch=0.0, yaw=0.0)
    c.update(kw)
    return c


def angles(s):
    tr, tp, ty = euler_xyz(s["torso_quat"])
    pr, _, py = euler_xyz(s["pelvis_quat"])
    return wrap(tr - pr), tp, wrap(ty - py)


def rewards(s, c):
    n = lambda v: math.sqrt(sum(x*x for x in v))
    dr, p, dy = angles(s)
    tr = lambda e2, sig: math.exp(-e2 / sig**2)
    v, om, feet = s["base_lin_vel"], s["base_ang_vel"], s["feet"]
    down = [f for f in feet if f["contact"]]
    g_torso = [-x for x in matrix(s["torso_quat"])[2]]
    gap = n([a - b for a, b in zip(feet[0]["position"], feet[1]["position"])])
    active = n([c["vx"], c["vy"]]) + abs(c["wz"]) > 0.1
    air = next(f["air_time"] for f in feet if not f["contact"]) if len(down) == 1 else 0.0
    t = dict(
        lin_vel=tr((v[0]-c["vx"])**2 + (v[1]-c["vy"])**2, SIG["lin_vel"]),
        ang_vel=tr((om[2]-c["wz"])**2, SIG["ang_vel"]),
        height=tr((s["base_height"]-c["height"])**2, SIG["height"]),
        roll=tr(wrap(dr - c["roll"])**2, SIG["roll"]),
        pitch=tr(wrap(p - c["pitch"])**2, SIG["pitch"]),
        yaw=tr(wrap(dy - c["yaw"])**2, SIG["yaw"]),
        energy=n([abs(a*b) for a, b in zip(s["torque"], s["qd"])]),
        action_rate=sum((a-b)**2 for a, b in zip(s["action"], s["prev_action"])),
        joint_acc=sum(a*a for a in s["qdd"]),
        vertical_vel=v[2]**2,
        roll_pitch_rate=om[0]**2 + om[1]**2,
        undesired_contacts=float(sum(n(f) > 1.0 for f in s["body_contact_forces"])),
        feet_slide=sum(n(f["velocity_xy"]) for f in down),
        flying=float(len(down) == 0),
        feet_force=sum(min(max(abs(f["force"][2]) - 500, 0), 400) for f in feet),
        feet_air_time=min(air, 0.4) if (len(down) == 1 and active) else 0.0,
        feet_stumble=float(any(n(f["force"][:2]) > 5*abs(f["force"][2]) for f in feet)),
        torso_orientation=g_torso[0]**2 + g_torso[1]**2,
        joint_limits=sum(max(q - 1.57, 0) + max(-1.57 - q, 0) for q in s["q"]),
        flat_orientation=s["projected_gravity"][0]**2 + s["projected_gravity"][1]**2,
        feet_distance=max(0.18 - gap, 0.0),
        termination=float(s["terminated"]),
    )
    weights = dict(W)
    for g, (idx, w) in GROUPS.items():
        t["joint_deviation." + g] = sum(abs(s["q"][j] - s["q_default"][j]) for j in idx)
        weights["joint_deviation." + g] = w
    total = sum(weights[k]*t[k] for k in t)
    return t, weights, total


def errors(traj):
    acc = dict(e_v=0.0, e_w=0.0, e_h=0.0, e_y=0.0, e_p=0.0, e_r=0.0)
    for s, c in traj:
        dr, p, dy = angles(s)
        v = s["base_lin_vel"]
        acc["e_v"] += math.hypot(v[0]-c["vx"], v[1]-c["vy"])
        acc["e_w"] += abs(s["base_ang_vel"][2] - c["wz"])
        acc["e_h"] += abs(s["base_height"] - c["height"])
        acc["e_y"] += abs(wrap(dy - c["yaw"]))
        acc["e_p"] += abs(wrap(p - c["pitch"]))
        acc["e_r"] += abs(wrap(dr - c["roll"]))
    return {k: v / len(traj) for k, v in acc.items()}


cases = []


def reward_case(name, s, c, keys, hand=None):
    t, w, total = rewards(s, c)
    exp = {}
    for k in keys:
        if k == "total":
            exp[k] = total
        elif k.endswith(".contribution"):
            base = k[: -len(".contribution")]
            exp[k] = w[base] * t[base]
        else:
            exp[k] = t[k]
    for k, v in (hand or {}).items():
        assert abs(exp[k] - v) < 1e-12, (name, k, exp[k], v)
    cases.append(dict(name=name, kind="reward", state=s, command=c, expected=exp))


def foot(contact=True, force=(0, 0, 0), vel=(0, 0), pos=(0, 0.1, 0), air=0.0):
    return dict(contact=contact, force=list(map(float, force)), velocity_xy=list(map(float, vel)),
                position=list(map(float, pos)), air_time=air)


R, L = (0, -0.1, 0), (0, 0.1, 0)
reward_case("nominal_stance", state(), command(), ["total", "lin_vel", "pitch", "energy"],
            {"total": 6.0, "lin_vel": 1.0, "pitch": 1.0, "energy": 0.0})
reward_case("feet_force_950n", state(feet=[foot(force=(0, 0, 950)), foot(pos=R)]), command(),
            ["feet_force", "feet_force.contribution"], {"feet_force": 400.0, "feet_force.contribution": -1.2})
reward_case("feet_force_700n", state(feet=[foot(force=(0, 0, -700)), foot(pos=R)]), command(),
            ["feet_force", "feet_force.contribution"], {"feet_force": 200.0})
reward_case("feet_force_both_feet", state(feet=[foot(force=(0, 0, 950)), foot(pos=R, force=(0, 0, 600))]),
            command(), ["feet_force", "total"], {"feet_force": 500.0, "total": 6.0 - 1.5})
reward_case("stumble_60n_over_10n", state(feet=[foot(force=(60, 0, 10)), foot(pos=R)]), command(),
            ["feet_stumble", "feet_stumble.contribution"], {"feet_stumble": 1.0, "feet_stumble.contribution": -2.0})
reward_case("stumble_at_ratio_does_not_fire", state(feet=[foot(force=(40, 30, 10)), foot(pos=R)]), command(),
            ["feet_stumble"], {"feet_stumble": 0.0})
reward_case("lin_vel_one_sigma", state(base_lin_vel=[0.25, 0.0, 0.0]), command(), ["lin_vel"],
            {"lin_vel": math.exp(-1)})
reward_case("height_one_sigma", state(base_height=0.65), command(), ["height", "total"])
reward_case("energy_3_4", state(torque=[3.0, -4.0] + [0.0]*13, qd=[1.0, 1.0] + [0.0]*13), command(),
            ["energy", "energy.contribution"], {"energy": 5.0, "energy.contribution": -0.005})
reward_case("action_rate_3_4", state(action=[3.0, 4.0] + [0.0]*13), command(), ["action_rate.contribution"],
            {"action_rate.contribution": -0.25})
reward_case("joint_acc_1000", state(qdd=[1000.0] + [0.0]*14), command(), ["joint_acc.contribution"],
            {"joint_acc.contribution": -0.25})
reward_case("vertical_and_roll_pitch_rate", state(base_lin_vel=[0, 0, 0.5], base_ang_vel=[0.3, 0.4, 0.0]),
            command(), ["vertical_vel", "roll_pitch_rate.contribution"],
            {"vertical_vel": 0.25, "roll_pitch_rate.contribution": -0.0375})
reward_case("undesired_contacts", state(body_contact_forces=[[0, 0, 5.0], [0.5, 0, 0], [3.0, 4.0, 0]]),
            command(), ["undesired_contacts.contribution"], {"undesired_contacts.contribution": -2.0})
reward_case("feet_slide_single_stance",
            state(feet=[foot(vel=(0.3, 0.4)), foot(contact=False, vel=(1, 0), pos=R, air=0.2)]), command(),
            ["feet_slide", "feet_slide.contribution", "feet_air_time"],
            {"feet_slide": 0.5, "feet_slide.contribution": -0.125, "feet_air_time": 0.0})
reward_case("flying", state(feet=[foot(contact=False), foot(contact=False, pos=R)]), command(),
            ["flying.contribution"], {"flying.contribution": -1.0})
reward_case("air_time_capped", state(feet=[foot(), foot(contact=False, pos=R, air=0.6)]), command(vx=0.3),
            ["feet_air_time", "feet_air_time.contribution"], {"feet_air_time": 0.4})
reward_case("air_time_idle_command", state(feet=[foot(), foot(contact=False, pos=R, air=0.3)]),
            command(vx=0.05), ["feet_air_time"], {"feet_air_time": 0.0})
reward_case("torso_pitched", state(torso_quat=quat_xyz(0.0, 0.2, 0.0)), command(pitch=0.2),
            ["pitch", "torso_orientation", "total"], {"pitch": 1.0})
reward_case("joint_limits", state(q=[1.77, -1.67] + [0.0]*13), command(), ["joint_limits.contribution"])
reward_case("flat_orientation", state(projected_gravity=[0.6, 0.0, -0.8]), command(),
            ["flat_orientation.contribution"], {"flat_orientation.contribution": -0.36})
reward_case("feet_too_close", state(feet=[foot(pos=(0, 0.05, 0)), foot(pos=(0, -0.05, 0))]), command(),
            ["feet_distance", "feet_distance.contribution"])
reward_case("joint_deviation_groups", state(q=[0.0, -0.3] + [0.0]*10 + [0.5, 0.0, 0.0]), command(),
            ["joint_deviation.waist.contribution", "joint_deviation.hip_roll_yaw.contribution"])
reward_case("termination", state(terminated=True), command(), ["termination.contribution", "total"],
            {"termination.contribution": -200.0, "total": -194.0})
reward_case("relative_roll_tracked", state(torso_quat=quat_xyz(0.3, 0.0, 0.0), pelvis_quat=quat_xyz(0.1, 0.0, 0.0)),
            command(roll=0.2), ["roll"])
reward_case("relative_yaw_wraps", state(torso_quat=quat_xyz(0.0, 0.0, 3.0), pelvis_quat=quat_xyz(0.0, 0.0, -3.0)),
            command(), ["yaw"], {"yaw": math.exp(-(6.0 - 2*math.pi)**2 / 0.0625)})


def tracking_case(name, traj, hand=None):
    exp = errors(traj)
    for k, v in (hand or {}).items():
        assert abs(exp[k] - v) < 1e-12, (name, k, exp[k], v)
    cases.append(dict(name=name, kind="tracking",
                      trajectory=[dict(state=s, command=c) for s, c in traj], expected=exp))


tracking_case("perfect_tracking", [(state(), command())] * 3, dict(e_v=0, e_w=0, e_h=0, e_y=0, e_p=0, e_r=0))
tracking_case("height_offset", [(state(base_height=0.85), command())] * 4, {"e_h": 0.1})
tracking_case("pitch_0_2_intrinsic", [(state(torso_quat=quat_xyz(0.0, 0.2, 0.0)), command())], {"e_p": 0.2})
tracking_case("velocity_half_the_time", [(state(base_lin_vel=[0.3, 0.4, 0.0]), command()), (state(), command())],
              {"e_v": 0.25})
tracking_case("mixed_attitude", [(state(torso_quat=quat_xyz(0.1, -0.3, 0.4), pelvis_quat=quat_xyz(0.02, 0.0, -0.2),
                                        base_ang_vel=[0, 0, 0.5]), command(wz=0.2, yaw=0.3, roll=0.05))])

cases.append(dict(name="dagger_3_4_0", kind="dagger", student=[3.0, 4.0] + [0.0]*13, teacher=[0.0]*15,
                  expected={"loss": 25.0}))
cases.append(dict(name="dagger_unit", kind="dagger", student=[0.0]*14 + [1.0], teacher=[0.0]*15,
                  expected={"loss": 1.0}))
cases.append(dict(name="proprio_layout", kind="proprio", state=state(q=[1.0] + [0.0]*14),
                  expected={"len": 51.0, "index.6": 1.0, "index.5": -1.0, "index.7": 0.0}))
cases.append(dict(name="command_ranges_100k", kind="command_sampler", seed=11, draws=100000))
cases.append(dict(name="randomization_ranges_100k", kind="randomization_sampler", seed=12, draws=100000))

out = Path(__file__).with_name("lbc_cases.json")
out.write_text(json.dumps({"cases": cases}, indent=1) + "\n")
print(f"wrote {len(cases)} cases to {out}")
