import threading

import numpy as np
import pytest

from synattack import nn
from synattack.corpus import build_vocab, encode
from synattack.target import (
    Prediction,
    ProtocolError,
    TargetConfig,
    TransportError,
    in_process_target,
    load_target,
    make_predict_server,
    remote_target,
    save_target,
    train_target,
)


class TestPrediction:
    def test_argmax_label(self):
        p = Prediction.from_probs([0.3, 0.7])
        assert p.label == 1

    def test_tie_goes_to_lower_index(self):
        assert Prediction.from_probs([0.5, 0.5]).label == 0


class TestQueryMeter:
    def test_two_calls_count_two(self, small_setup):
        handle = in_process_target(small_setup["trained"])
        x = small_setup["eval_encoded"][0]
        handle.predict(x)
        handle.predict(x)
        assert handle.meter.count == 2

    def test_batch_counts_its_size(self, small_setup):
        handle = in_process_target(small_setup["trained"])
        handle.predict_batch(small_setup["eval_encoded"][:7])
        assert handle.meter.count == 7

    def test_scoped_meters_are_private(self, small_setup):
        handle = in_process_target(small_setup["trained"])
        scope = handle.scoped()
        scope.predict(small_setup["eval_encoded"][0])
        assert scope.meter.count == 1
        assert handle.meter.count == 0

    def test_repeated_sentence_still_counts_without_cache(self, small_setup):
        handle = in_process_target(small_setup["trained"])
        x = small_setup["eval_encoded"][0]
        a = handle.predict(x)
        b = handle.predict(x)
        assert handle.meter.count == 2
        assert np.array_equal(a.probs, b.probs)

    def test_cache_reports_both_counts(self, small_setup):
        handle = in_process_target(small_setup["trained"], cache=True)
        x = small_setup["eval_encoded"][0]
        y = small_setup["eval_encoded"][1]
        handle.predict(x)
        handle.predict(x)
        handle.predict_batch([x, y, y])
        assert handle.meter.count == 5
        assert handle.meter.unique_count == 2


class TestTrainTarget:
    def test_word_cnn_separable_corpus(self, small_setup):
        # planted-keyword corpus is separable; keyword lookup scores 1.0
        assert small_setup["trained"].holdout_accuracy >= 0.95

    def test_linear_bag_separable_corpus(self, bench):
        corpus = bench.target_corpus(2000)
        vocab = build_vocab(corpus)
        encoded = [encode(ex, vocab, 16) for ex in corpus]
        cfg = TargetConfig(d=16, n_classes=2, arch="linear_bag", embed_dim=16,
                           epochs=5, seed=1)
        trained = train_target(encoded, cfg, vocab)
        assert trained.holdout_accuracy >= 0.9

    def test_same_seed_identical_checkpoints(self, bench, tmp_path):
        corpus = bench.target_corpus(150)
        vocab = build_vocab(corpus)
        encoded = [encode(ex, vocab, 16) for ex in corpus]
        cfg = TargetConfig(d=16, n_classes=2, embed_dim=16, filters=12, epochs=2, seed=4)
        hashes = []
        for name in ("a", "b"):
            trained = train_target(encoded, cfg, vocab)
            path = tmp_path / f"{name}.ckpt"
            save_target(str(path), trained)
            hashes.append(nn.checkpoint_hash(str(path)))
        assert hashes[0] == hashes[1]

    def test_checkpoint_round_trip(self, small_setup, tmp_path):
        path = tmp_path / "t.ckpt"
        save_target(str(path), small_setup["trained"])
        loaded = load_target(str(path))
        handle_a = in_process_target(small_setup["trained"])
        handle_b = in_process_target(loaded)
        for x in small_setup["eval_encoded"][:10]:
            assert np.array_equal(handle_a.predict(x).probs, handle_b.predict(x).probs)

    def test_single_class_rejected(self, bench):
        corpus = [ex for ex in bench.target_corpus(80) if ex.label == 0]
        vocab = build_vocab(corpus)
        encoded = [encode(ex, vocab, 16) for ex in corpus]
        cfg = TargetConfig(d=16, n_classes=2, embed_dim=8, epochs=1)
        with pytest.raises(ValueError, match="classes"):
            train_target(encoded, cfg, vocab)

    def test_probs_are_distributions(self, small_setup):
        handle = in_process_target(small_setup["trained"])
        preds = handle.predict_batch(small_setup["eval_encoded"][:100])
        for p in preds:
            assert abs(float(p.probs.sum()) - 1.0) <= 1e-6
            assert (p.probs >= 0).all()


class StubPredictServer(threading.Thread):
    """Minimal HTTP predict endpoint returning a fixed payload."""

    def __init__(self, body: bytes, status: int = 200):
        super().__init__(daemon=True)
        from http.server import BaseHTTPRequestHandler, HTTPServer

        outer_body, outer_status = body, status

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                self.rfile.read(int(self.headers.get("Content-Length", 0)))
                self.send_response(outer_status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(outer_body)))
                self.end_headers()
                self.wfile.write(outer_body)

        self.server = HTTPServer(("127.0.0.1", 0), Handler)
        self.port = self.server.server_address[1]

    def run(self):
        self.server.serve_forever()

    def stop(self):
        self.server.shutdown()
        self.server.server_close()


class TestRemoteTarget:
    def test_well_formed_response(self, small_setup):
        server = StubPredictServer(b'{"probs": [0.3, 0.7]}')
        server.start()
        try:
            handle = remote_target(f"http://127.0.0.1:{server.port}", 2,
                                   small_setup["target_vocab"])
            pred = handle.predict(small_setup["eval_encoded"][0])
            assert pred.label == 1
            assert handle.meter.count == 1
        finally:
            server.stop()

    def test_wrong_length_is_protocol_error(self, small_setup):
        server = StubPredictServer(b'{"probs": [1.0]}')
        server.start()
        try:
            handle = remote_target(f"http://127.0.0.1:{server.port}", 2,
                                   small_setup["target_vocab"])
            with pytest.raises(ProtocolError):
                handle.predict(small_setup["eval_encoded"][0])
            assert handle.meter.count == 0
        finally:
            server.stop()

    def test_non_distribution_is_protocol_error(self, small_setup):
        server = StubPredictServer(b'{"probs": [0.9, 0.9]}')
        server.start()
        try:
            handle = remote_target(f"http://127.0.0.1:{server.port}", 2,
                                   small_setup["target_vocab"])
            with pytest.raises(ProtocolError):
                handle.predict(small_setup["eval_encoded"][0])
        finally:
            server.stop()

    def test_http_error_is_transport_error(self, small_setup):
        server = StubPredictServer(b"boom", status=500)
        server.start()
        try:
            handle = remote_target(f"http://127.0.0.1:{server.port}", 2,
                                   small_setup["target_vocab"])
            with pytest.raises(TransportError):
                handle.predict(small_setup["eval_encoded"][0])
            assert handle.meter.count == 0
        finally:
            server.stop()

    def test_loopback_matches_in_process(self, small_setup):
        server = make_predict_server(small_setup["trained"])
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            port = server.server_address[1]
            remote = remote_target(f"http://127.0.0.1:{port}", 2,
                                   small_setup["target_vocab"])
            local = in_process_target(small_setup["trained"])
            for x in small_setup["eval_encoded"][:50]:
                assert remote.predict(x).label == local.predict(x).label
            assert remote.meter.count == local.meter.count == 50
        finally:
            server.shutdown()
            server.server_close()
