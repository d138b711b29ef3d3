"""Train a small model on the cycle grammar and print one forecast next to the truth."""

import numpy as np

from memforecast.forecaster import ForecasterConfig, build_ablation
from memforecast.harness.training import TrainConfig, train
from memforecast.memory import MemoryConfig
from memforecast.protocol import frame_accuracy, windows
from memforecast.synthdata import CorpusSpec, cycle_grammar, make_corpus


def main():
    corpus = make_corpus(cycle_grammar(3, 4), CorpusSpec(length=40, num_train=40, num_test=5,
                                                         feature_dim=8), seed=0)
    config = ForecasterConfig(3, 8, hidden_visual=8, hidden_label=8, mem_visual=MemoryConfig(4, 8),
                              mem_label=MemoryConfig(4, 8), decoder_hidden=8)
    model = build_ablation("full", config, seed=0)
    result = train(model, corpus.train, TrainConfig(epochs=60, batch_size=20, learning_rate=1e-2))
    print(f"loss {result.losses[0]:.3f} -> {result.losses[-1]:.4f}")

    sample = corpus.test[0]
    obs, pred = windows(len(sample), 0.3, 0.5)
    guess = model.forecast(sample.features[obs], sample.labels[obs], len(pred))
    letters = np.array(list(corpus.grammar.classes))
    print("observed ", " ".join(letters[sample.labels[obs]]))
    print("truth    ", " ".join(letters[sample.labels[pred]]))
    print("forecast ", " ".join(letters[guess]))
    print(f"accuracy {frame_accuracy(guess, sample.labels[pred]):.3f}")


if __name__ == "__main__":
    main()
