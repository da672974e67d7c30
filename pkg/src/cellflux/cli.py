"""Command line interface.

Verbs: ``mesh`` (generate and export the meshes), ``flux-sweep`` (emergent
flux data), ``compare`` (full model comparison with metrics), ``validate``
(config check). Exit codes: 0 success, 2 configuration error, 3 solver
failure.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .mesh import generate_mesh, save_mesh
from .runner import (ConfigError, ExperimentConfig, preset_config,
                     run_flux_convergence, run_model_comparison,
                     validate_config)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="experiment config file")
    parser.add_argument("--preset", choices=("paper", "ci"),
                        help="built-in parameter set")
    parser.add_argument("--out", type=Path, default=None,
                        help="output directory (defaults to the config's)")


def _load_config(args) -> ExperimentConfig:
    if (args.config is None) == (getattr(args, "preset", None) is None):
        raise ConfigError(["give exactly one of --config or --preset"])
    if args.config is not None:
        return validate_config(args.config.read_text())
    return preset_config(args.preset)


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="cellflux",
        description="Compare the spatial-exclusion and point-source "
                    "diffusion models of a single secreting cell.")
    sub = parser.add_subparsers(dest="verb", required=True)

    p = sub.add_parser("mesh", help="generate and export the meshes")
    _add_common(p)

    p = sub.add_parser("flux-sweep", help="emergent-flux sweeps (no FEM)")
    _add_common(p)

    p = sub.add_parser("compare", help="solve both models and emit metrics")
    _add_common(p)

    p = sub.add_parser("validate", help="check a config file")
    p.add_argument("--config", type=Path, required=True)

    args = parser.parse_args(argv)

    try:
        if args.verb == "validate":
            validate_config(args.config.read_text())
            print("config OK")
            return EXIT_OK
        config = _load_config(args)
    except ConfigError as exc:
        for err in exc.errors:
            print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = args.out if args.out is not None else Path(config.out_dir)
    try:
        if args.verb == "mesh":
            out.mkdir(parents=True, exist_ok=True)
            holed = generate_mesh(config.domain)
            save_mesh(holed, out / "mesh_holed.txt")
            full = generate_mesh(config.full_domain())
            save_mesh(full, out / "mesh_full.txt")
            print(f"wrote {out}/mesh_holed.txt ({holed.num_triangles} triangles) "
                  f"and {out}/mesh_full.txt ({full.num_triangles} triangles)")
        elif args.verb == "flux-sweep":
            manifest = run_flux_convergence(config, out)
            print(f"wrote {len(manifest.files)} files to {out}")
        elif args.verb == "compare":
            _warn_if_large(config)
            manifest = run_model_comparison(config, out)
            print(f"wrote {len(manifest.files)} files to {out}")
            if manifest.failures:
                for name, msg in manifest.failures.items():
                    print(f"solver failure in run {name!r}: {msg}", file=sys.stderr)
                return EXIT_SOLVER
    except Exception as exc:  # solver/runtime problems map to exit code 3
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


def _warn_if_large(config: ExperimentConfig, budget: float = 2e10) -> None:
    """Estimate steps x vertices and warn when a run will take a long while."""
    area = (2.0 * config.domain.half_width) ** 2
    nv = area / (0.5 * config.domain.target_h ** 2)
    work = nv * config.grid.n_steps * (1 + len(config.r_values))
    if work > budget:
        print(f"note: estimated work {work:.2e} vertex-steps exceeds the "
              f"comfortable budget; consider --preset ci "
              f"(h={0.35}, dt={0.15625}, T={10.0})", file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
