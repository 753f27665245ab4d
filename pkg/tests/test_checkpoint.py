import pathlib
import tempfile
import unittest

import numpy as np
import yaml

from csqbm.checkpoint import (
    CHECKPOINT_FORMAT,
    CheckpointError,
    CheckpointMeta,
    checkpoint_document,
    dumps_checkpoint,
    file_digest,
    load_checkpoint,
    model_digest,
    model_from_document,
    save_checkpoint,
)
from csqbm.exp_family import ExpFamilyPrior
from csqbm.model import build_model, random_hidden_spec
from csqbm.quantum_core import PauliOp

from .oracles import random_model


class CheckpointRoundTripTest(unittest.TestCase):
    def setUp(self):
        self._tmp = tempfile.TemporaryDirectory()
        self.root = pathlib.Path(self._tmp.name)

    def tearDown(self):
        self._tmp.cleanup()

    def test_weights_survive_bit_exact(self):
        rng = np.random.default_rng(0)
        for basis in (PauliOp.Z, PauliOp.X):
            model = random_model(2, 3, rng, basis=basis, beta=0.7)
            path = self.root / f"model_{basis.value}.yaml"
            meta = CheckpointMeta(rng_label="agent", step=42, optimizer={"alpha": 0.01})
            digest = save_checkpoint(path, model, meta)
            loaded, loaded_meta = load_checkpoint(path)

            np.testing.assert_array_equal(loaded.W, model.W)
            np.testing.assert_array_equal(loaded.prior.theta.values, model.prior.theta.values)
            np.testing.assert_array_equal(loaded.hidden_spec.coefficients(), model.hidden_spec.coefficients())
            self.assertEqual(loaded.coupling_basis, basis)
            self.assertEqual(loaded.beta, 0.7)
            self.assertEqual(loaded_meta, meta)
            self.assertEqual(digest, file_digest(path))
            self.assertEqual(model_digest(loaded), model_digest(model))

    def test_flags_are_kept(self):
        rng = np.random.default_rng(1)
        prior = ExpFamilyPrior.gaussian([0.2, -0.1], [1.0, 0.8], log_scale=0.3)
        model = build_model(
            prior,
            random_hidden_spec(2, PauliOp.Y, rng, diagonal_only=False),
            rng,
            0.05,
            coupling_basis=PauliOp.Y,
            quadratic_coupling=True,
            strict_sampler=False,
            theta_trainable=True,
        )
        path = self.root / "flags.yaml"
        save_checkpoint(path, model)
        loaded, _ = load_checkpoint(path)
        self.assertTrue(loaded.quadratic_coupling)
        self.assertFalse(loaded.strict_sampler)
        self.assertTrue(loaded.theta_trainable)
        self.assertEqual(loaded.prior.log_scale, 0.3)
        np.testing.assert_array_equal(loaded.weights_vector(), model.weights_vector())

    def test_save_creates_parents_and_leaves_no_temporary(self):
        path = self.root / "nested" / "deeper" / "ckpt.yaml"
        save_checkpoint(path, random_model(2, 1, np.random.default_rng(2)))
        self.assertTrue(path.exists())
        self.assertEqual([p.name for p in path.parent.iterdir()], ["ckpt.yaml"])

    def test_digest_is_stable_and_sensitive(self):
        model = random_model(2, 2, np.random.default_rng(3))
        self.assertEqual(model_digest(model), model_digest(model.with_weights(model.weights_vector())))
        nudged = model.weights_vector()
        nudged[0] += 1e-12
        self.assertNotEqual(model_digest(model), model_digest(model.with_weights(nudged)))
        self.assertEqual(dumps_checkpoint(model), dumps_checkpoint(model))


class CheckpointValidationTest(unittest.TestCase):
    def setUp(self):
        self.document = checkpoint_document(random_model(2, 2, np.random.default_rng(4)))

    def test_document_header(self):
        self.assertEqual(self.document["format"], CHECKPOINT_FORMAT)
        self.assertEqual(self.document["version"], 1)
        self.assertEqual((self.document["n"], self.document["m"]), (2, 2))

    def test_rejects_foreign_documents(self):
        for patch in ({"format": "something-else"}, {"version": 2}):
            with self.assertRaises(CheckpointError):
                model_from_document(dict(self.document, **patch))
        with self.assertRaises(CheckpointError):
            model_from_document(["not", "a", "mapping"])

    def test_rejects_inconsistent_payloads(self):
        broken = dict(self.document)
        del broken["W"]
        with self.assertRaises(CheckpointError):
            model_from_document(broken)
        with self.assertRaises(CheckpointError):
            model_from_document(dict(self.document, n=3))
        with self.assertRaises(CheckpointError):
            model_from_document(dict(self.document, beta=-1.0))

    def test_malformed_yaml_names_the_file(self):
        with tempfile.TemporaryDirectory() as tmp:
            path = pathlib.Path(tmp) / "bad.yaml"
            path.write_text("format: [unclosed\n", encoding="utf-8")
            with self.assertRaises(CheckpointError) as caught:
                load_checkpoint(path)
            self.assertIn("bad.yaml", str(caught.exception))

    def test_saved_file_is_plain_yaml(self):
        text = dumps_checkpoint(random_model(2, 1, np.random.default_rng(5)))
        self.assertEqual(yaml.safe_load(text)["format"], CHECKPOINT_FORMAT)


if __name__ == "__main__":
    unittest.main()
