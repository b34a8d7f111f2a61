"""Fixed suite of test circuits shared by the end-to-end tests."""

import numpy as np

GATES_1Q = ("h", "u1", "u2")
CHANNELS = ("depol 0.0", "depol 0.3", "depol 0.75", "erase")


def _channel_line(kind: str, q: int) -> str:
    if kind == "erase":
        return f"channel erase {q}"
    return f"channel depol {q} p={kind.split()[1]}"


def random_circuit(rng, n: int, n_gates: int, n_channels: int, mode: str = "dm", name: str = "") -> str:
    lines = [f"name {name}"] if name else []
    lines += [f"qubits {n}", f"mode {mode}"]
    body = []
    for _ in range(n_gates):
        kind = "cnot" if n > 1 and rng.random() < 0.3 else GATES_1Q[rng.integers(3)]
        if kind == "cnot":
            c, t = rng.choice(n, size=2, replace=False)
            body.append(f"gate cnot {c} {t}")
        elif kind == "h":
            body.append(f"gate h {rng.integers(n)}")
        else:
            top = 8 if kind == "u1" else 4
            body.append(f"gate {kind} {rng.integers(n)} pow={rng.integers(1, top)}")
    for _ in range(n_channels):
        pos = int(rng.integers(len(body) + 1))
        body.insert(pos, _channel_line(CHANNELS[rng.integers(len(CHANNELS))], int(rng.integers(n))))
    return "\n".join(lines + body) + "\n"


def acceptance_suite() -> list[str]:
    """25 dm circuits: n in {1, 2, 3}, up to 8 gates and up to 3 channels each."""
    rng = np.random.default_rng(20240611)
    fixed = [
        "name bell\nqubits 2\nmode dm\ngate h 0\ngate cnot 0 1\n",
        "name depol-0.3\nqubits 1\nmode dm\nchannel depol 0 p=0.3\n",
        "name erase-plus\nqubits 1\nmode dm\ngate h 0\nchannel erase 0\n",
        "name depol-0.75\nqubits 1\nmode dm\nchannel depol 0 p=0.75\n",
        "name ghz-noisy\nqubits 3\nmode dm\ngate h 0\ngate cnot 0 1\nchannel depol 1 p=0.3\ngate cnot 1 2\n",
    ]
    out = list(fixed)
    for idx in range(len(fixed), 25):
        n = 1 + idx % 3
        n_gates = int(rng.integers(1, 9))
        n_channels = int(rng.integers(0, 4))
        out.append(random_circuit(rng, n, n_gates, n_channels, name=f"random-{idx}"))
    return out
