import json

import numpy as np
import pytest
import requests

from camera import CameraView
from cloud import unproject
from complete import (DEPTH_ROUTE, IMAGE_ROUTE, DepthCompletionRequest, GroundTruthOracle, ImageCompletion,
                      ImageCompletionRequest, OracleDepthCompleter, OracleImageCompleter, RemoteBackend,
                      RemoteDepthCompleter, RemoteImageCompleter, align_inpainted_depth, check_depth_contract,
                      check_image_contract, depth_request_payload, depth_response_payload,
                      image_request_payload, image_response_payload, make_completers, parse_depth_request,
                      parse_image_request)
from error_handlers import BackendUnavailableError, InvalidArgumentError, MalformedResponseError
from fileio import quantize_color
from raster import rasterize
from warp import PartialView, project


@pytest.fixture
def oracle(sphere_mesh):
    return GroundTruthOracle(sphere_mesh)


@pytest.fixture
def side_request(sphere_mesh, front_view, intrinsics):
    anchor = rasterize(sphere_mesh, front_view)
    side = CameraView.orbit(60.0, 0.0, 2.5, intrinsics, step=1)
    partial = project(unproject(anchor), side)
    return ImageCompletionRequest.from_partial(anchor.color, anchor.mask, front_view, partial), partial


class TestOracle:
    def test_render_is_cached(self, oracle, front_view):
        assert oracle.render(front_view) is oracle.render(front_view)

    def test_cache_is_bounded(self, sphere_mesh, intrinsics):
        oracle = GroundTruthOracle(sphere_mesh, cache_size=2)
        for azimuth in (0.0, 30.0, 60.0):
            oracle.render(CameraView.orbit(azimuth, 0.0, 2.5, intrinsics))
        assert len(oracle._cache) == 2

    def test_image_keeps_known_pixels(self, oracle, side_request):
        request, partial = side_request
        completion = OracleImageCompleter(oracle).complete_image(request)
        truth = oracle.render(request.view)
        covered = partial.coverage
        np.testing.assert_array_equal(completion.color[covered], quantize_color(partial.color[covered]))
        fill = truth.mask & ~covered
        np.testing.assert_array_equal(completion.color[fill], quantize_color(truth.color[fill]))
        np.testing.assert_array_equal(completion.foreground, truth.mask | covered)
        assert check_image_contract(request, completion).passed

    def test_depth_keeps_known_pixels(self, oracle, side_request):
        request, partial = side_request
        completion = OracleImageCompleter(oracle).complete_image(request)
        depth_request = DepthCompletionRequest(completion.color, completion.foreground, partial.depth,
                                               partial.coverage, partial.view)
        depth = OracleDepthCompleter(oracle).complete_depth(depth_request)
        covered = partial.coverage
        np.testing.assert_allclose(depth[covered], partial.depth[covered], rtol=1e-6)
        assert np.all(depth[completion.foreground] > 0)
        assert np.all(depth[~completion.foreground] == 0)
        assert check_depth_contract(depth_request, depth, 1e-4).passed

    def test_unconditioned_depth_is_ground_truth(self, oracle, front_view):
        truth = oracle.render(front_view)
        request = DepthCompletionRequest.unconditioned(truth.color, truth.mask, front_view)
        depth = OracleDepthCompleter(oracle).complete_depth(request)
        np.testing.assert_array_equal(depth, truth.depth.astype(np.float32).astype(np.float64))


class TestContracts:
    def test_changed_known_pixel_fails(self, oracle, side_request):
        request, partial = side_request
        completion = OracleImageCompleter(oracle).complete_image(request)
        tampered = completion.color.copy()
        rows, cols = np.nonzero(partial.coverage)
        tampered[rows[0], cols[0]] += 0.2
        check = check_image_contract(request, ImageCompletion(tampered, completion.foreground, 1.0 / 255.0))
        assert not check.passed
        assert "known-region" in check.message

    def test_declared_tolerance_above_cap_fails(self, side_request, oracle):
        request, _ = side_request
        completion = OracleImageCompleter(oracle, tolerance=0.5).complete_image(request)
        assert not check_image_contract(request, completion, tolerance_cap=16.0 / 255.0).passed

    def test_foreground_must_contain_coverage(self, side_request, oracle):
        request, partial = side_request
        completion = OracleImageCompleter(oracle).complete_image(request)
        foreground = completion.foreground & ~partial.coverage
        check = check_image_contract(request, ImageCompletion(completion.color, foreground, 1.0 / 255.0))
        assert not check.passed

    def test_wrong_size_fails(self, side_request):
        request, _ = side_request
        check = check_image_contract(request, ImageCompletion(np.zeros((8, 8, 3)), np.zeros((8, 8), bool), 0.0))
        assert not check.passed

    def test_depth_must_be_positive_on_foreground(self, front_view):
        foreground = np.ones(front_view.shape, dtype=bool)
        request = DepthCompletionRequest.unconditioned(np.zeros(front_view.shape + (3,)), foreground, front_view)
        assert not check_depth_contract(request, np.zeros(front_view.shape), None).passed


class TestAlignment:
    @staticmethod
    def scene(view, scale, shift, noise, seed=0):
        height, width = view.shape
        rows = np.arange(height, dtype=np.float64)[:, None]
        truth = np.repeat(1.5 + 1.5 * rows / (height - 1), width, axis=1)
        rng = np.random.default_rng(seed)
        pred = (truth - shift) / scale + rng.normal(scale=noise, size=truth.shape)
        coverage = np.zeros(view.shape, dtype=bool)
        coverage[:, : width // 2] = True
        warped = PartialView(np.zeros((height, width, 3)), np.where(coverage, truth, 0.0), coverage, view)
        return truth, pred, warped, ~coverage

    @pytest.mark.parametrize("scale", [0.5, 0.8, 1.25])
    @pytest.mark.parametrize("shift", [-0.3, 0.0, 0.3])
    def test_recovers_affine_corruption(self, front_view, scale, shift):
        truth, pred, warped, inpaint = self.scene(front_view, scale, shift, 1e-3)
        result = align_inpainted_depth(pred, warped, inpaint)
        assert abs(result.scale - scale) <= 0.01 * scale
        assert abs(result.shift - shift) <= 0.01
        assert result.support == 64 * 4
        np.testing.assert_allclose(result.depth[inpaint], truth[inpaint], atol=0.02)

    def test_covered_pixels_keep_warped_depth(self, front_view):
        truth, pred, warped, inpaint = self.scene(front_view, 0.8, 0.3, 1e-3)
        result = align_inpainted_depth(pred, warped, inpaint)
        np.testing.assert_array_equal(result.depth[warped.coverage], warped.depth[warped.coverage])

    def test_no_overlap_falls_back_to_identity(self, front_view):
        pred = np.full(front_view.shape, 2.0)
        inpaint = np.ones(front_view.shape, dtype=bool)
        result = align_inpainted_depth(pred, PartialView.empty(front_view), inpaint)
        assert result.scale == 1.0
        assert result.shift == 0.0
        assert result.support == 0
        np.testing.assert_array_equal(result.depth, pred)

    def test_constant_overlap_shifts_only(self, front_view):
        height, width = front_view.shape
        coverage = np.zeros(front_view.shape, dtype=bool)
        coverage[:, :32] = True
        warped = PartialView(np.zeros((height, width, 3)), np.where(coverage, 2.0, 0.0), coverage, front_view)
        pred = np.full(front_view.shape, 1.5)
        result = align_inpainted_depth(pred, warped, ~coverage)
        assert result.scale == 1.0
        assert result.shift == pytest.approx(0.5)


class TestWire:
    def test_image_request_survives_json(self, side_request):
        request, _ = side_request
        payload = json.loads(json.dumps(image_request_payload(request)))
        parsed = parse_image_request(payload)
        np.testing.assert_array_equal(parsed.coverage, request.coverage)
        np.testing.assert_array_equal(parsed.anchor_mask, request.anchor_mask)
        np.testing.assert_allclose(parsed.partial_color[request.coverage],
                                   request.partial_color[request.coverage], atol=0.5 / 255.0 + 1e-12)
        np.testing.assert_allclose(parsed.r_rel, request.r_rel, atol=1e-15)
        assert parsed.view.pose.allclose(request.view.pose)

    def test_depth_request_survives_json(self, side_request):
        _, partial = side_request
        request = DepthCompletionRequest(partial.color, partial.coverage, partial.depth, partial.coverage, partial.view)
        parsed = parse_depth_request(json.loads(json.dumps(depth_request_payload(request))))
        np.testing.assert_array_equal(parsed.coverage, request.coverage)
        np.testing.assert_array_equal(parsed.partial_depth, partial.depth.astype(np.float32))

    def test_missing_field_is_invalid(self, side_request):
        request, _ = side_request
        payload = image_request_payload(request)
        del payload["partial_png_b64"]
        with pytest.raises(InvalidArgumentError):
            parse_image_request(payload)

    def test_bad_base64_is_invalid(self, side_request):
        request, _ = side_request
        payload = image_request_payload(request)
        payload["anchor_png_b64"] = "not base64!"
        with pytest.raises(InvalidArgumentError):
            parse_image_request(payload)


class FakeResponse:
    def __init__(self, status_code, body):
        self.status_code = status_code
        self._body = body

    def json(self):
        if isinstance(self._body, Exception):
            raise self._body
        return self._body


class FakeSession:
    def __init__(self, responses):
        self.responses = list(responses)
        self.calls = []

    def post(self, url, json=None, timeout=None):
        self.calls.append(url)
        response = self.responses.pop(0)
        if isinstance(response, Exception):
            raise response
        return response


class TestRemoteBackend:
    def test_retries_connection_errors(self):
        session = FakeSession([requests.ConnectionError("down")] * 3)
        backend = RemoteBackend("http://backend", retries=2, session=session)
        with pytest.raises(BackendUnavailableError):
            backend.post(IMAGE_ROUTE, {})
        assert len(session.calls) == 3

    def test_server_error_then_success(self):
        session = FakeSession([FakeResponse(503, {}), FakeResponse(200, {"ok": True})])
        backend = RemoteBackend("http://backend/", retries=2, session=session)
        assert backend.post(DEPTH_ROUTE, {}) == {"ok": True}
        assert session.calls == ["http://backend" + DEPTH_ROUTE] * 2

    def test_non_json_body_is_malformed(self):
        session = FakeSession([FakeResponse(200, ValueError("no json"))])
        with pytest.raises(MalformedResponseError):
            RemoteBackend("http://backend", session=session).post(IMAGE_ROUTE, {})

    def test_client_error_is_not_retried(self):
        session = FakeSession([FakeResponse(400, {"code": "malformed-request", "message": "bad"})])
        with pytest.raises(BackendUnavailableError):
            RemoteBackend("http://backend", session=session).post(IMAGE_ROUTE, {})
        assert len(session.calls) == 1

    def test_image_completer_rejects_wrong_size(self, side_request):
        request, _ = side_request
        small = image_response_payload(ImageCompletion(np.zeros((8, 8, 3)), np.ones((8, 8), bool), 0.0))
        completer = RemoteImageCompleter(RemoteBackend("http://b", session=FakeSession([FakeResponse(200, small)])))
        with pytest.raises(MalformedResponseError):
            completer.complete_image(request)

    def test_depth_completer_decodes_pfm(self, front_view):
        depth = np.full(front_view.shape, 2.25)
        session = FakeSession([FakeResponse(200, depth_response_payload(depth))])
        completer = RemoteDepthCompleter(RemoteBackend("http://b", session=session))
        request = DepthCompletionRequest.unconditioned(np.zeros(front_view.shape + (3,)),
                                                       np.ones(front_view.shape, bool), front_view)
        np.testing.assert_array_equal(completer.complete_depth(request), depth)

    def test_depth_completer_rejects_missing_field(self, front_view):
        session = FakeSession([FakeResponse(200, {"nothing": 1})])
        completer = RemoteDepthCompleter(RemoteBackend("http://b", session=session))
        request = DepthCompletionRequest.unconditioned(np.zeros(front_view.shape + (3,)),
                                                       np.ones(front_view.shape, bool), front_view)
        with pytest.raises(MalformedResponseError):
            completer.complete_depth(request)


class TestMakeCompleters:
    def test_oracle_needs_mesh(self):
        with pytest.raises(InvalidArgumentError):
            make_completers({"kind": "oracle"})

    def test_unknown_kind(self, sphere_mesh):
        with pytest.raises(InvalidArgumentError):
            make_completers({"kind": "telepathy"}, sphere_mesh)

    def test_remote_needs_url(self, monkeypatch):
        monkeypatch.delenv("VIEWLOOM_BACKEND_URL", raising=False)
        with pytest.raises(InvalidArgumentError):
            make_completers({"kind": "remote"})

    def test_remote_url_from_environment(self, monkeypatch):
        monkeypatch.setenv("VIEWLOOM_BACKEND_URL", "http://example.invalid:9000")
        image, depth = make_completers({"kind": "remote"})
        assert image.backend.endpoint == "http://example.invalid:9000"
        assert depth.depth_tolerance is None
