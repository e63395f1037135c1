#!/usr/bin/env python3
"""
Guidance pipeline unit tests: validation, prompt, parser, heuristic, fallback, audit and worker.
"""

import json
import os
import tempfile
import threading
import unittest
from unittest.mock import MagicMock

import numpy as np

from hric_iab_lab.guidance.client import EndpointTransportError
from hric_iab_lab.guidance.guidance import (ArityError, DuplicateMbsLineError, GuidanceAuditLog, GuidanceInput,
                                            GuidancePolicy, GuidanceWorker, HeuristicProvider, MissingMbsLineError,
                                            NonNumericTokenError, PolicyError, RowSumError, SbsReport,
                                            UnknownMbsIndexError, ValueRangeError, build_prompt,
                                            guidance_with_fallback, heuristic_guidance, parse_guidance,
                                            serialize_policy, simplex_violations, uniform_policy, validate_input)
from hric_iab_lab.topology.topology import NetworkConfig


def make_input(num_mbs=3, num_sbs=6, gain=1e-9, users=2, rate=12.5, interference_gain=1e-12):
    rows = []
    for m in range(num_mbs):
        row = []
        for n in range(num_sbs):
            interference = tuple(((mp, n), interference_gain) for mp in range(num_mbs) if mp != m)
            row.append(SbsReport(gain, users, rate, interference))
        rows.append(tuple(row))
    return GuidanceInput(tuple(rows))


def replace_report(guidance_input, m, n, report):
    rows = [list(row) for row in guidance_input.reports]
    rows[m][n] = report
    return GuidanceInput(tuple(tuple(row) for row in rows))


class ScriptedProvider:
    """Returns (or raises) the scripted items in order."""
    name = "scripted"

    def __init__(self, items):
        self.items = list(items)
        self.calls = 0

    def complete(self, prompt, guidance_input):
        item = self.items[self.calls % len(self.items)]
        self.calls += 1
        if isinstance(item, BaseException):
            raise item
        return item


class TestValidateInput(unittest.TestCase):

    def test_in_range_accepted_unchanged(self):
        guidance_input = make_input(gain=1e-9, users=4, rate=12.5)
        report = validate_input(guidance_input)
        self.assertTrue(report.accepted)
        self.assertIs(report.guidance_input, guidance_input)
        self.assertEqual(report.violations, ())

    def test_negative_users_named(self):
        bad = replace_report(make_input(), 1, 2, SbsReport(1e-9, -1, 12.5, ()))
        report = validate_input(bad)
        self.assertFalse(report.accepted)
        self.assertEqual([v.field for v in report.violations], ["MBS2.SBS3.connected_users"])

    def test_zero_db_gain_rejected(self):
        bad = replace_report(make_input(), 0, 0, SbsReport(1.0, 2, 12.5, ()))
        report = validate_input(bad)
        self.assertFalse(report.accepted)
        self.assertEqual(report.violations[0].field, "MBS1.SBS1.avg_channel_gain")

    def test_interference_gain_checked(self):
        bad = replace_report(make_input(num_mbs=2), 0, 0, SbsReport(1e-9, 2, 12.5, (((1, 0), 0.0),)))
        report = validate_input(bad)
        self.assertFalse(report.accepted)
        self.assertIn("interference", report.violations[0].field)

    def test_negative_rate_rejected(self):
        bad = replace_report(make_input(), 2, 5, SbsReport(1e-9, 2, -0.1, ()))
        self.assertFalse(validate_input(bad).accepted)


class TestBuildPrompt(unittest.TestCase):

    def setUp(self):
        self.config = NetworkConfig()
        self.guidance_input = make_input()

    def test_fixed_sentences_present(self):
        prompt = build_prompt(self.guidance_input, self.config)
        self.assertIn("You are an expert in wireless communications", prompt)
        self.assertIn("Ensure the total power allocation across SBSs for each MBS sums to 1.", prompt)
        self.assertIn("MBSX: [value1, value2, value3, value4, value5, value6]", prompt)
        self.assertIn("44 dBm", prompt)
        self.assertIn("100 MHz", prompt)

    def test_block_cardinality(self):
        lines = build_prompt(self.guidance_input, self.config).splitlines()
        self.assertEqual(sum(1 for line in lines if line.startswith("MBS") and line.endswith(":")), 3)
        self.assertEqual(sum(1 for line in lines if line.startswith("SBS")), 18)

    def test_report_serialization(self):
        prompt = build_prompt(self.guidance_input, self.config)
        self.assertIn("SBS1: [-90.0 dB, 2, 12.50, [[(2, 1), -120.0 dB], [(3, 1), -120.0 dB]]]", prompt)

    def test_byte_stable(self):
        self.assertEqual(build_prompt(self.guidance_input, self.config),
                         build_prompt(make_input(), NetworkConfig()))


class TestParseGuidance(unittest.TestCase):

    def test_single_row(self):
        policy = parse_guidance("MBS1: [0.1, 0.1, 0.2, 0.2, 0.2, 0.2]", 1, 6)
        np.testing.assert_allclose(policy.allocation[0], [0.1, 0.1, 0.2, 0.2, 0.2, 0.2], rtol=1e-12)

    def test_near_simplex_row_renormalized(self):
        policy = parse_guidance("MBS1: [0.33, 0.33, 0.33]", 1, 3)
        np.testing.assert_allclose(policy.allocation[0], [0.33 / 0.99] * 3, rtol=1e-12)
        self.assertAlmostEqual(float(policy.allocation[0].sum()), 1.0, places=12)

    def test_tolerates_prose_and_markup(self):
        text = ("Let me reason about the interference first.\n"
                "**MBS2:** [0.5, 0.5]\n"
                "  - MBS1 :  [ 0.25 , 0.75 ].\r\n"
                "That split favors the stronger backhaul link.\n")
        policy = parse_guidance(text, 2, 2)
        np.testing.assert_allclose(policy.allocation, [[0.25, 0.75], [0.5, 0.5]])

    def test_numbered_list(self):
        policy = parse_guidance("1. MBS1: [0.2, 0.8]\n2. MBS2: [0.6, 0.4]\n", 2, 2)
        np.testing.assert_allclose(policy.allocation, [[0.2, 0.8], [0.6, 0.4]])

    def test_mention_inside_sentence_ignored(self):
        with self.assertRaises(MissingMbsLineError):
            parse_guidance("I would start from MBS1: SBS1: [0.5, 0.5] and refine later.", 1, 2)
        with self.assertRaises(MissingMbsLineError):
            parse_guidance("Then MBS1: [0.25, 0.75] is best.", 1, 2)
        # a sentence echoing the answer does not count as a duplicate
        policy = parse_guidance("Compared with MBS1: [0.5, 0.5] earlier,\nMBS1: [0.3, 0.7]\n", 1, 2)
        np.testing.assert_allclose(policy.allocation, [[0.3, 0.7]])

    def test_arity_error(self):
        with self.assertRaises(ArityError):
            parse_guidance("MBS1: [0.5, 0.5]", 1, 6)

    def test_missing_line(self):
        with self.assertRaises(MissingMbsLineError):
            parse_guidance("MBS1: [0.5, 0.5]", 2, 2)

    def test_duplicate_line(self):
        with self.assertRaises(DuplicateMbsLineError):
            parse_guidance("MBS1: [0.5, 0.5]\nMBS1: [0.2, 0.8]", 1, 2)

    def test_unknown_index(self):
        with self.assertRaises(UnknownMbsIndexError):
            parse_guidance("MBS1: [0.5, 0.5]\nMBS3: [0.5, 0.5]", 2, 2)

    def test_non_numeric_token(self):
        with self.assertRaises(NonNumericTokenError):
            parse_guidance("MBS1: [0.5, half]", 1, 2)
        with self.assertRaises(NonNumericTokenError):
            parse_guidance("MBS1: [nan, 0.5]", 1, 2)

    def test_value_range(self):
        with self.assertRaises(ValueRangeError):
            parse_guidance("MBS1: [-0.2, 1.2]", 1, 2)

    def test_row_sum_outside_band(self):
        with self.assertRaises(RowSumError):
            parse_guidance("MBS1: [0.4, 0.4]", 1, 2)

    def test_round_trip_random_policies(self):
        rng = np.random.default_rng(7)
        for _ in range(1000):
            num_mbs, num_sbs = int(rng.integers(1, 5)), int(rng.integers(1, 9))
            policy = GuidancePolicy(rng.dirichlet(np.ones(num_sbs), size=num_mbs))
            parsed = parse_guidance(serialize_policy(policy), num_mbs, num_sbs)
            np.testing.assert_allclose(parsed.allocation, policy.allocation, rtol=1e-12, atol=1e-15)


class TestPolicy(unittest.TestCase):

    def test_rejects_short_row(self):
        with self.assertRaises(PolicyError):
            GuidancePolicy(np.array([[0.4, 0.4]]))

    def test_rejects_negative_entry(self):
        with self.assertRaises(PolicyError):
            GuidancePolicy(np.array([[1.5, -0.5]]))

    def test_uniform(self):
        np.testing.assert_allclose(uniform_policy(3, 6).allocation, np.full((3, 6), 1 / 6))


class TestHeuristic(unittest.TestCase):

    def test_identical_stats_uniform(self):
        np.testing.assert_allclose(heuristic_guidance(make_input()).allocation, np.full((3, 6), 1 / 6))

    def test_zero_users_zero_weight(self):
        guidance_input = replace_report(make_input(num_mbs=1, num_sbs=3), 0, 1, SbsReport(1e-9, 0, 0.0, ()))
        row = heuristic_guidance(guidance_input).allocation[0]
        self.assertEqual(row[1], 0.0)
        np.testing.assert_allclose(row, [0.5, 0.0, 0.5])

    def test_user_ratio(self):
        guidance_input = GuidanceInput(((SbsReport(1e-9, 1, 5.0, ()), SbsReport(1e-9, 4, 5.0, ())),))
        np.testing.assert_allclose(heuristic_guidance(guidance_input).allocation[0], [0.2, 0.8])

    def test_scale_invariant_in_users(self):
        base = GuidanceInput(((SbsReport(1e-9, 1, 5.0, (((1, 0), 1e-12),)), SbsReport(3e-10, 3, 5.0, (((1, 1), 1e-11),))),
                              (SbsReport(2e-9, 2, 5.0, (((0, 0), 1e-12),)), SbsReport(1e-9, 5, 5.0, (((0, 1), 1e-13),)))))
        scaled = GuidanceInput(tuple(tuple(SbsReport(r.avg_channel_gain, r.connected_users * 3, r.avg_expected_rate_mbps,
                                                     r.interference) for r in row) for row in base.reports))
        np.testing.assert_allclose(heuristic_guidance(base).allocation, heuristic_guidance(scaled).allocation,
                                   rtol=1e-12)

    def test_no_users_falls_back_to_uniform(self):
        row = heuristic_guidance(make_input(num_mbs=1, num_sbs=4, users=0)).allocation[0]
        np.testing.assert_allclose(row, [0.25] * 4)


class TestFallback(unittest.TestCase):

    def setUp(self):
        self.config = NetworkConfig()
        self.guidance_input = make_input()

    def test_failing_endpoint_gives_uniform(self):
        provider = ScriptedProvider([EndpointTransportError("unreachable")])
        outcome = guidance_with_fallback(self.guidance_input, provider, self.config)
        self.assertTrue(outcome.fallback_used)
        self.assertEqual(outcome.stage, "request")
        np.testing.assert_allclose(outcome.policy.allocation, np.full((3, 6), 1 / 6))

    def test_canned_valid_text(self):
        text = "\n".join(f"MBS{i}: [0.5, 0.1, 0.1, 0.1, 0.1, 0.1]" for i in (1, 2, 3))
        outcome = guidance_with_fallback(self.guidance_input, ScriptedProvider([text]), self.config)
        self.assertFalse(outcome.fallback_used)
        self.assertEqual(outcome.stage, "ok")
        np.testing.assert_allclose(outcome.policy.allocation[2], [0.5, 0.1, 0.1, 0.1, 0.1, 0.1])
        self.assertEqual(len(outcome.prompt_sha256), 64)

    def test_canned_malformed_text(self):
        outcome = guidance_with_fallback(self.guidance_input, ScriptedProvider(["I cannot help."]), self.config)
        self.assertTrue(outcome.fallback_used)
        self.assertEqual(outcome.stage, "parse")
        self.assertIn("MissingMbsLineError", outcome.reason)
        np.testing.assert_allclose(outcome.policy.allocation, np.full((3, 6), 1 / 6))

    def test_rejected_input_skips_provider(self):
        provider = MagicMock()
        bad = replace_report(self.guidance_input, 0, 0, SbsReport(1e-9, -1, 12.5, ()))
        outcome = guidance_with_fallback(bad, provider, self.config)
        provider.complete.assert_not_called()
        self.assertTrue(outcome.fallback_used)
        self.assertEqual(outcome.stage, "validate")
        self.assertIn("connected_users", outcome.reason)

    def test_heuristic_provider_round_trip(self):
        outcome = guidance_with_fallback(self.guidance_input, HeuristicProvider(), self.config)
        self.assertFalse(outcome.fallback_used)
        np.testing.assert_allclose(outcome.policy.allocation, heuristic_guidance(self.guidance_input).allocation)

    def test_fuzzed_provider_never_breaks_invariants(self):
        rng = np.random.default_rng(11)
        items = []
        for _ in range(1000):
            kind = int(rng.integers(0, 6))
            if kind == 0:
                items.append(RuntimeError("boom"))
            elif kind == 1:
                items.append(None)
            elif kind == 2:
                items.append("".join(chr(c) for c in rng.integers(32, 127, size=int(rng.integers(0, 80)))))
            else:
                rows = rng.normal(1 / 6, 0.1 * kind, size=(int(rng.integers(1, 5)), int(rng.integers(4, 8))))
                items.append("\n".join(f"MBS{i + 1}: [{', '.join(f'{v:.3f}' for v in row)}]"
                                       for i, row in enumerate(rows)))
        provider = ScriptedProvider(items)
        for _ in items:
            outcome = guidance_with_fallback(self.guidance_input, provider, self.config)
            self.assertEqual(outcome.policy.shape, (3, 6))
            self.assertEqual(simplex_violations(outcome.policy.allocation), [])
            if outcome.fallback_used:
                np.testing.assert_allclose(outcome.policy.allocation, np.full((3, 6), 1 / 6))


class TestAuditLog(unittest.TestCase):

    def test_one_json_record_per_cycle(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = os.path.join(tmp, "audit.jsonl")
            audit = GuidanceAuditLog(path)
            config = NetworkConfig()
            guidance_with_fallback(make_input(), HeuristicProvider(), config, audit=audit)
            guidance_with_fallback(make_input(), ScriptedProvider(["garbage"]), config, audit=audit)
            with open(path) as f:
                records = [json.loads(line) for line in f]
        self.assertEqual(len(records), 2)
        self.assertEqual([r["fallback"] for r in records], [False, True])
        self.assertEqual(records[1]["raw_response"], "garbage")
        self.assertEqual(records[0]["prompt_sha256"], records[1]["prompt_sha256"])
        for key in ("timestamp", "stage", "reason"):
            self.assertIn(key, records[0])


class BlockingProvider:
    name = "blocking"

    def __init__(self):
        self.release = threading.Event()

    def complete(self, prompt, guidance_input):
        self.release.wait(5.0)
        return HeuristicProvider().complete(prompt, guidance_input)


class TestGuidanceWorker(unittest.TestCase):

    def test_submit_and_collect(self):
        worker = GuidanceWorker(HeuristicProvider(), NetworkConfig())
        self.assertTrue(worker.submit(make_input()))
        outcome = worker.wait(5.0)
        worker.close()
        self.assertIsNotNone(outcome)
        self.assertFalse(outcome.fallback_used)
        self.assertIsNone(worker.poll())

    def test_busy_worker_refuses(self):
        provider = BlockingProvider()
        worker = GuidanceWorker(provider, NetworkConfig())
        self.assertTrue(worker.submit(make_input()))
        self.assertTrue(worker.busy)
        self.assertFalse(worker.submit(make_input()))
        self.assertIsNone(worker.poll())
        provider.release.set()
        self.assertIsNotNone(worker.wait(5.0))
        worker.close()

    def test_discard_drops_finished_outcome(self):
        worker = GuidanceWorker(HeuristicProvider(), NetworkConfig())
        worker.submit(make_input())
        worker.close(timeout=5.0)
        worker.discard_pending()
        self.assertIsNone(worker.poll())

    def test_discard_silences_in_flight_cycle(self):
        provider = BlockingProvider()
        worker = GuidanceWorker(provider, NetworkConfig())
        worker.submit(make_input())
        worker.discard_pending()
        provider.release.set()
        self.assertIsNone(worker.wait(5.0))
        worker.close(timeout=5.0)
        self.assertTrue(worker.submit(make_input()))
        self.assertIsNotNone(worker.wait(5.0))
        worker.close()


if __name__ == "__main__":
    unittest.main()
