import json
import sys
import textwrap
from pathlib import Path

import numpy as np
import pytest

from neodefence.errors import (
    OracleProtocolError,
    OracleQueryError,
    OracleTimeoutError,
)
from neodefence.oracle import (
    CountingOracle,
    FunctionOracle,
    SubprocessOracle,
    run_conformance_suite,
)
from neodefence.simlab import SimOracle

ECHO_ORACLE = [sys.executable, str(Path(__file__).parent / "echo_oracle.py")]


def rand_img(seed, shape=(8, 8, 3)):
    return np.random.default_rng(seed).integers(0, 256, size=shape, dtype=np.uint8)


def script_oracle(tmp_path, body):
    path = tmp_path / "oracle.py"
    path.write_text(textwrap.dedent(body))
    return [sys.executable, str(path)]


# --- in-process oracles -------------------------------------------------------


def test_function_oracle():
    oracle = FunctionOracle(lambda img: int(img[0, 0, 0]) % 3, num_classes=3)
    img = np.full((4, 4, 3), 7, dtype=np.uint8)
    assert oracle.classify(img) == 1
    assert oracle.classify_batch([img, img]) == [1, 1]


def test_counting_oracle_tracks_queries():
    inner = FunctionOracle(lambda img: 0, num_classes=2)
    counting = CountingOracle(inner)
    img = np.zeros((4, 4, 3), dtype=np.uint8)
    counting.classify(img)
    counting.classify_batch([img] * 5)
    assert counting.queries == 6


def test_sim_oracle_batch_matches_loop(world):
    oracle = world["oracle"]
    imgs = world["images"][:10]
    assert oracle.classify_batch(imgs) == [oracle.classify(i) for i in imgs]
    assert oracle.classify_batch([]) == []


def test_sim_oracle_batch_permutation_equivariant(world):
    oracle = world["oracle"]
    imgs = world["images"][:8]
    labels = oracle.classify_batch(imgs)
    perm = [3, 0, 7, 1, 6, 2, 5, 4]
    assert oracle.classify_batch([imgs[i] for i in perm]) == [labels[i] for i in perm]


# --- subprocess client ----------------------------------------------------------


def test_subprocess_oracle_handshake_and_labels():
    with SubprocessOracle(ECHO_ORACLE) as oracle:
        assert oracle.num_classes == 2
        assert oracle.describe().kind == "subprocess"
        assert oracle.classify(rand_img(0)) == 0
        assert oracle.classify_batch([rand_img(i) for i in range(5)]) == [0] * 5


def test_subprocess_oracle_self_test():
    with SubprocessOracle(ECHO_ORACLE, self_test_image=rand_img(1)):
        pass  # deterministic oracle passes the self test


def test_subprocess_oracle_matches_out_of_order_replies(tmp_path):
    # replies to each batch pair in reversed order
    cmd = script_oracle(tmp_path, """
        import json, sys
        print(json.dumps({"proto": "neo-oracle/1", "num_classes": 4}), flush=True)
        pending = []
        for line in sys.stdin:
            msg = json.loads(line)
            pending.append(msg["id"])
            if len(pending) == 2:
                for rid in reversed(pending):
                    print(json.dumps({"id": rid, "label": rid % 4}), flush=True)
                pending = []
    """)
    with SubprocessOracle(cmd) as oracle:
        labels = oracle.classify_batch([rand_img(i) for i in range(4)])
        assert labels == [0, 1, 2, 3]  # ids assigned in order, matched correctly


def test_subprocess_oracle_bad_handshake(tmp_path):
    cmd = script_oracle(tmp_path, """
        import json, sys
        print(json.dumps({"proto": "something-else/9", "num_classes": 2}), flush=True)
        sys.stdin.read()
    """)
    with pytest.raises(OracleProtocolError, match="bad handshake"):
        SubprocessOracle(cmd)


def test_subprocess_oracle_crash_surfaces(tmp_path):
    cmd = script_oracle(tmp_path, """
        import json, sys
        print(json.dumps({"proto": "neo-oracle/1", "num_classes": 2}), flush=True)
        sys.stdin.readline()
        sys.exit(13)  # die mid-conversation
    """)
    with SubprocessOracle(cmd) as oracle:
        with pytest.raises(OracleProtocolError):
            oracle.classify(rand_img(2))


def test_subprocess_oracle_malformed_reply(tmp_path):
    cmd = script_oracle(tmp_path, """
        import json, sys
        print(json.dumps({"proto": "neo-oracle/1", "num_classes": 2}), flush=True)
        sys.stdin.readline()
        print("{{{{ not json", flush=True)
        sys.stdin.read()
    """)
    with SubprocessOracle(cmd) as oracle:
        with pytest.raises(OracleProtocolError, match="malformed"):
            oracle.classify(rand_img(3))


def test_subprocess_oracle_error_reply_carries_batch_index(tmp_path):
    cmd = script_oracle(tmp_path, """
        import json, sys
        print(json.dumps({"proto": "neo-oracle/1", "num_classes": 2}), flush=True)
        for line in sys.stdin:
            msg = json.loads(line)
            if msg["id"] == 1:
                print(json.dumps({"id": 1, "error": "boom"}), flush=True)
            else:
                print(json.dumps({"id": msg["id"], "label": 0}), flush=True)
    """)
    with SubprocessOracle(cmd) as oracle:
        with pytest.raises(OracleQueryError, match="boom") as exc_info:
            oracle.classify_batch([rand_img(i) for i in range(3)])
        assert exc_info.value.index == 1


def test_subprocess_oracle_timeout(tmp_path):
    cmd = script_oracle(tmp_path, """
        import json, sys, time
        print(json.dumps({"proto": "neo-oracle/1", "num_classes": 2}), flush=True)
        sys.stdin.readline()
        time.sleep(60)  # never reply
    """)
    with SubprocessOracle(cmd, timeout_s=0.5) as oracle:
        with pytest.raises(OracleTimeoutError):
            oracle.classify(rand_img(4))


def test_subprocess_oracle_rejects_one_class(tmp_path):
    cmd = script_oracle(tmp_path, """
        import json, sys
        print(json.dumps({"proto": "neo-oracle/1", "num_classes": 1}), flush=True)
        sys.stdin.read()
    """)
    with pytest.raises(OracleProtocolError, match="at least 2"):
        SubprocessOracle(cmd)


# --- conformance suite -----------------------------------------------------------


def test_conformance_suite_passes_echo_oracle():
    failures = run_conformance_suite(ECHO_ORACLE, num_classes=2,
                                     fuzz_lines=200, seed=0)
    assert failures == []


def test_conformance_suite_flags_wrong_class_count():
    failures = run_conformance_suite(ECHO_ORACLE, num_classes=7,
                                     fuzz_lines=0, seed=0)
    assert any("num_classes" in f for f in failures)


def test_conformance_suite_flags_nondeterminism(tmp_path):
    cmd = script_oracle(tmp_path, """
        import json, sys
        print(json.dumps({"proto": "neo-oracle/1", "num_classes": 2}), flush=True)
        flip = 0
        for line in sys.stdin:
            msg = json.loads(line)
            rid = msg.get("id")
            if not isinstance(rid, int):
                continue
            if "png" not in msg:
                print(json.dumps({"id": rid, "error": "no png"}), flush=True)
                continue
            flip ^= 1
            print(json.dumps({"id": rid, "label": flip}), flush=True)
    """)
    failures = run_conformance_suite(cmd, num_classes=2, fuzz_lines=0, seed=0)
    assert failures  # unstable labels must be reported


def test_conformance_suite_flags_fragile_oracle(tmp_path):
    cmd = script_oracle(tmp_path, """
        import json, sys
        print(json.dumps({"proto": "neo-oracle/1", "num_classes": 2}), flush=True)
        for line in sys.stdin:
            msg = json.loads(line)  # crashes on the first garbage line
            print(json.dumps({"id": msg["id"], "label": 0}), flush=True)
    """)
    failures = run_conformance_suite(cmd, num_classes=2, fuzz_lines=50, seed=0)
    assert failures
