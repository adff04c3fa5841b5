#!/usr/bin/env python3
"""Smoke test for the fido2d_py extension module.

Build the module first, then run this script from the repository root:

    cargo build -p fido2d-py
    python3 python/smoke_test.py
"""

import importlib.util
import pathlib
import sys


def load_module():
    root = pathlib.Path(__file__).resolve().parent.parent
    candidates = [
        root / "target" / "debug" / "libfido2d_py.so",
        root / "target" / "release" / "libfido2d_py.so",
        root / "target" / "debug" / "libfido2d_py.dylib",
        root / "target" / "release" / "libfido2d_py.dylib",
    ]
    for path in candidates:
        if path.exists():
            spec = importlib.util.spec_from_file_location("fido2d_py", path)
            module = importlib.util.module_from_spec(spec)
            spec.loader.exec_module(module)
            return module
    sys.exit("extension not found; run `cargo build -p fido2d-py` first")


def main():
    f = load_module()
    print(f"signature algorithm: {f.SIGNATURE_ALGORITHM}")

    # Crypto round trip.
    seed = bytes(range(32))
    public = f.keygen(seed)
    sig = f.sign(seed, b"pay 10 to bob")
    assert f.verify(public, b"pay 10 to bob", sig)
    assert not f.verify(public, b"pay 11 to bob", sig)
    assert not f.verify(public, b"pay 10 to bob", b"garbage")
    print("crypto: sign/verify round trip ok")

    # Honest scenario: one completion, both lemmas hold.
    honest = f.run_scenario(f.builtin_scenario("honest"), seed=1)
    assert honest.lemma1_holds and honest.lemma2_holds, honest.log
    assert honest.completions == [("alice", "bank", "pay 10 to bob")]
    print(f"honest scenario: {honest!r}")

    # Manipulation against a non-comparing user: lemma 1 must fail.
    attack = f.run_scenario(f.builtin_scenario("manipulation"), seed=0xF1D02D)
    assert not attack.lemma1_holds
    assert attack.completions == [("alice", "bank", "pay 1000 to eve")]
    assert 0 < len(attack.counterexample) <= 15
    print(f"manipulation scenario: {attack!r}")

    # The same attack against a comparing user dies.
    defended = f.run_scenario(
        f.builtin_scenario("manipulation-compare"), seed=0xF1D02D
    )
    assert defended.lemma1_holds and defended.lemma2_holds
    assert defended.completions == []
    print(f"manipulation vs compare: {defended!r}")

    # Lemma checkers over a hand-built trace: the dual-compromise escape.
    l1, l2 = f.check_lemmas(
        [
            (1, "CompromiseDev1", "alice", "bank", ""),
            (2, "CompromiseDev2", "alice", "bank", ""),
            (3, "TransactionComplete", "alice", "bank", "fraud"),
        ]
    )
    assert l1 and l2
    l1, l2 = f.check_lemmas([(1, "TransactionComplete", "alice", "bank", "fraud")])
    assert not l1 and not l2
    print("lemma checkers: escape clause and violation detection ok")

    # A short exploration in the strongest claimed-secure configuration.
    report = f.explore("compromise-b,phishing,compare", runs=200, seed=7)
    assert report.expected_secure and report.as_expected(), report.detail
    print(f"explore: {report.summary}")

    print("smoke test: all checks passed")


if __name__ == "__main__":
    main()
