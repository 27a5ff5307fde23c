import numpy as np
import pytest

from fixpool import objectives, seeding, taskspace
from fixpool.errors import ConfigError, DegeneracyError, DimensionMismatchError
from fixpool.models import AlgorithmParams, EmbeddingKind, EmbeddingSpec, HeadKind, Split, TaskConfig
from fixpool.solvers import embedding, head_for, protonet_logits, ridge_logits
from fixpool.trainer import init_params


class TestEmbedding:
    def test_identity_returns_input(self):
        spec = EmbeddingSpec(EmbeddingKind.IDENTITY, 3, 3)
        x = np.array([1.0, -2.0, 0.5])
        np.testing.assert_array_equal(embedding.embed(np.zeros(0), spec, x), x)

    def test_identity_needs_equal_dims(self):
        with pytest.raises(DimensionMismatchError):
            EmbeddingSpec(EmbeddingKind.IDENTITY, 3, 4)

    def test_linear_is_affine(self):
        spec = EmbeddingSpec(EmbeddingKind.LINEAR, 2, 3)
        W = np.arange(6.0).reshape(3, 2)
        b = np.array([1.0, 0.0, -1.0])
        w = embedding.pack([(W, b)])
        x = np.array([0.5, -1.0])
        np.testing.assert_allclose(embedding.embed(w, spec, x), W @ x + b)

    def test_zero_mlp_outputs_bias(self, mlp_spec):
        layers = embedding.unpack(np.zeros(mlp_spec.n_params), mlp_spec)
        bias = np.linspace(-1, 1, 8)
        layers[-1] = (layers[-1][0], bias)
        w = embedding.pack(layers)
        np.testing.assert_allclose(embedding.embed(w, mlp_spec, np.ones(8)), bias)

    def test_wrong_vector_length(self, linear_spec):
        with pytest.raises(DimensionMismatchError):
            embedding.embed(np.zeros(3), linear_spec, np.zeros(8))

    def test_mlp_parameter_count(self, mlp_spec):
        assert mlp_spec.n_params == 8 * 32 + 32 + 32 * 8 + 8


class TestProtoNet:
    def test_query_at_prototype_wins(self):
        zs = np.array([[0.0, 0.0], [2.0, 0.0], [10.0, 10.0]])
        ys = np.array([0, 0, 1])
        logits = protonet_logits(zs, ys, np.array([[1.0, 0.0]]))
        assert logits[0, 0] == 0.0
        assert np.argmax(logits[0]) == 0

    def test_logits_are_negative_squared_distances(self):
        gen = np.random.default_rng(0)
        zs, zq = gen.normal(size=(4, 3)), gen.normal(size=(2, 3))
        ys = np.array([0, 1, 0, 1])
        protos = np.stack([zs[ys == c].mean(axis=0) for c in range(2)])
        expected = -((zq[:, None, :] - protos[None]) ** 2).sum(-1)
        np.testing.assert_allclose(protonet_logits(zs, ys, zq), expected)

    def test_orthogonal_transform_preserves_logits(self):
        gen = np.random.default_rng(2)
        zs, zq = gen.normal(size=(6, 4)), gen.normal(size=(5, 4))
        ys = np.array([0, 1, 2, 0, 1, 2])
        Q, _ = np.linalg.qr(gen.normal(size=(4, 4)))
        np.testing.assert_allclose(protonet_logits(zs @ Q, ys, zq @ Q), protonet_logits(zs, ys, zq), atol=1e-10)

    def test_one_shot_prototypes_are_the_supports(self):
        zs = np.array([[1.0, 2.0], [-3.0, 0.5]])
        logits = protonet_logits(zs, np.array([0, 1]), zs)
        np.testing.assert_array_equal(np.diag(logits), 0.0)

    def test_empty_class(self):
        with pytest.raises(DegeneracyError):
            protonet_logits(np.zeros((2, 2)), np.array([0, 0]), np.zeros((1, 2)), n_way=2)


class TestRidge:
    def test_matches_normal_equations(self):
        gen = np.random.default_rng(1)
        zs, zq = gen.normal(size=(6, 3)), gen.normal(size=(4, 3))
        Y = np.eye(3)[[0, 1, 2, 0, 1, 2]]
        phi = np.hstack([zs, np.ones((6, 1))])
        B = np.linalg.solve(phi.T @ phi + 0.5 * np.eye(4), phi.T @ Y)
        expected = np.hstack([zq, np.ones((4, 1))]) @ B
        np.testing.assert_allclose(ridge_logits(zs, Y, zq, lam=0.5), expected, rtol=1e-10, atol=1e-12)

    def test_solution_is_the_unique_minimizer(self):
        gen = np.random.default_rng(3)
        zs, zq = gen.normal(size=(6, 3)), gen.normal(size=(2, 3))
        ys = np.array([0, 1, 2, 0, 1, 2])
        lam = 0.5
        _, cache = head_for(HeadKind.ridge(lam)).forward(zs, ys, zq, 3)
        B = cache[4]
        phi = np.hstack([zs, np.ones((6, 1))])
        Y = np.eye(3)[ys]

        def objective(b):
            return np.sum((phi @ b - Y) ** 2) + lam * np.sum(b ** 2)

        np.testing.assert_allclose(phi.T @ (phi @ B - Y) + lam * B, 0.0, atol=1e-8)
        for _ in range(50):
            delta = gen.normal(size=B.shape)
            delta *= 1e-3 / np.linalg.norm(delta)
            assert objective(B + delta) > objective(B)

    def test_infinite_shrinkage_gives_uniform_predictions(self):
        gen = np.random.default_rng(4)
        zs, zq = gen.normal(size=(6, 3)), gen.normal(size=(4, 3))
        Y = np.eye(3)[[0, 1, 2, 0, 1, 2]]
        logits = ridge_logits(zs, Y, zq, lam=1e9)
        np.testing.assert_allclose(logits, 0.0, atol=1e-6)
        loss, _, _ = objectives.softmax_cross_entropy(logits, np.array([0, 1, 2, 0]))
        assert loss == pytest.approx(np.log(3), abs=1e-7)

    def test_lambda_must_be_positive(self):
        with pytest.raises(ConfigError):
            HeadKind.ridge(0.0)


def _random_episode(seed):
    ds = taskspace.generate_gaussian_dataset(6, 10, 8, 1.5, 1.0, seed=seed)
    return taskspace.sample_episode_ml(ds, TaskConfig(3, 2, 3), seed=seed)


@pytest.mark.parametrize("head", [HeadKind.protonet(), HeadKind.ridge(1.0)], ids=["protonet", "ridge"])
def test_episode_gradient_matches_central_differences(head, mlp_spec, fd):
    for draw in range(20):
        params = init_params(mlp_spec, seed=(11, draw))
        episode = _random_episode(draw)
        _, _, grad = objectives.episode_loss_and_grad(params, episode, head)

        def loss(w):
            return objectives.episode_loss(AlgorithmParams(w, mlp_spec), episode, head)[0]

        numeric = fd(loss, params.vector)
        rel = np.linalg.norm(grad - numeric) / max(np.linalg.norm(numeric), 1e-12)
        assert rel < 1e-5, f"draw {draw}: relative error {rel:.2e}"


@pytest.mark.parametrize("head", [HeadKind.protonet(), HeadKind.ridge(0.3)], ids=["protonet", "ridge"])
def test_head_feature_gradients(head, fd):
    """Gradients w.r.t. support and query features, identity embedding."""
    gen = seeding.rng(5)
    zs, zq = gen.normal(size=(6, 4)), gen.normal(size=(5, 4))
    ys = np.array([0, 1, 2, 0, 1, 2])
    yq = np.array([0, 1, 2, 2, 1])
    h = head_for(head)

    def loss(flat):
        s, q = flat[:24].reshape(6, 4), flat[24:].reshape(5, 4)
        return objectives.softmax_cross_entropy(h.logits(s, ys, q, 3), yq)[0]

    logits, cache = h.forward(zs, ys, zq, 3)
    _, dlogits, _ = objectives.softmax_cross_entropy(logits, yq)
    d_zs, d_zq = h.backward(cache, dlogits)
    numeric = fd(loss, np.concatenate([zs.ravel(), zq.ravel()]))
    np.testing.assert_allclose(np.concatenate([d_zs.ravel(), d_zq.ravel()]), numeric, rtol=1e-6, atol=1e-9)


def test_embedding_dimension_mismatch_in_episode(splits):
    params = init_params(EmbeddingSpec(EmbeddingKind.LINEAR, 3, 3), seed=0)
    episode = taskspace.sample_episode_ml(splits[Split.TRAIN], TaskConfig(2, 1, 1), seed=0)
    with pytest.raises(DimensionMismatchError):
        objectives.episode_loss(params, episode, HeadKind.protonet())


@pytest.mark.parametrize("head", [HeadKind.protonet(), HeadKind.ridge(0.7)], ids=["protonet", "ridge"])
def test_heads_are_equivariant_to_class_relabeling(head):
    gen = np.random.default_rng(6)
    zs, zq = gen.normal(size=(8, 3)), gen.normal(size=(5, 3))
    ys = np.array([0, 1, 2, 3, 0, 1, 2, 3])
    perm = np.array([2, 0, 3, 1])
    h = head_for(head)
    logits = h.logits(zs, ys, zq, 4)
    relabeled = h.logits(zs, perm[ys], zq, 4)
    np.testing.assert_allclose(relabeled[:, perm], logits, rtol=1e-12, atol=1e-12)
