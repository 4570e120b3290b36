"""Retrain the bundled session checkpoint on synthetic mixed traces."""

import argparse
import time

from gazekey.session import TrainConfig, save_model, train_session_model
from gazekey.synth import session_dataset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--traces", type=int, default=40)
    ap.add_argument("--seed", type=int, default=100)
    ap.add_argument("--epochs", type=int, default=100)
    ap.add_argument("--out", default="src/gazekey/data/session_model.json")
    args = ap.parse_args()
    traces = session_dataset(args.traces, seed=args.seed)
    t0 = time.perf_counter()
    model = train_session_model(traces, TrainConfig(epochs=args.epochs, seed=args.seed),
                                log=lambda e, loss: print(f"epoch {e:3d} loss {loss:.4f}", flush=True))
    save_model(model, args.out)
    print(f"trained in {time.perf_counter() - t0:.0f} s -> {args.out}")


if __name__ == "__main__":
    main()
