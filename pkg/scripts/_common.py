"""Helpers shared by the experiment scripts."""
from latentshift.axis import fit_feature_axis
from latentshift.numerics import sample_gaussian_latents
from latentshift.pairs import build_pair_tuples, expand_tuples, split_dataset
from latentshift.shifter import TrainConfig, build_arch, evaluate_metrics, train
from latentshift.world import score_batch


def fit_and_train(world, j, seed, n_axis=10000, n_candidates=10000, epochs=10, arch="a",
                  learning_rate=1e-5, multiplier=1.0):
    z = sample_gaussian_latents(n_axis, world.d, seed=1000 + seed)
    axis = fit_feature_axis(z, score_batch(world, z)[:, j], feature_name=world.feature_names[j])
    tuples = build_pair_tuples(world, axis, j, n_candidates, multiplier=multiplier, seed=2000 + seed)
    tr, va, te = split_dataset(expand_tuples(tuples), seed=3000 + seed)
    cfg = TrainConfig(learning_rate=learning_rate, epochs=epochs, seed=4000 + seed)
    model, history = train(tr, va, build_arch(arch, world.d, 1), cfg)
    return axis, model, history, evaluate_metrics(model, te), tuples.diagnostics
