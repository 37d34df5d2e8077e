import argparse
import logging
import pprint
import sys

from foura_api import FouraAPI
from foura_api.utils.exceptions import FouraError, NumericalFailure

logger = logging.getLogger('foura')

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class FouraArgumentParser(argparse.ArgumentParser):
    """Usage errors exit with code 1 like configuration errors"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:

    # CLI and Argument Parsing
    parser = FouraArgumentParser(formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser.add_argument("-cf", "--config-file", help="YAML configuration file for application", required=False)
    parser.add_argument("-o", "--out", type=str,
        help="Output directory (overrides local.output_dir of the config)", default=None)
    parser.add_argument("-ll", "--log-level", type=str, choices=["DEBUG", "INFO", "WARNING", "ERROR"],
        help="Logging verbosity", default="INFO")
    subparsers = parser.add_subparsers()

    # Train subcommand -----------------------------------------------------------------------
    parser_train = subparsers.add_parser("train", aliases=["tr"],
        help="Train adapters on the configured toy task",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser_train.add_argument("-s", "--seed", type=int, nargs="+",
        help="Seed(s) overriding train.seed; several seeds run in parallel (FOURA_THREADS)", default=None)
    parser_train.set_defaults(name="train")

    # Analyze subcommand -----------------------------------------------------------------------
    parser_analyze = subparsers.add_parser("analyze", aliases=["an"],
        help="Spread, amplification, bound and projection analysis of trained checkpoints",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser_analyze.add_argument("checkpoints", type=str, nargs="+",
        help="Checkpoint files written by train")
    parser_analyze.add_argument("-b", "--base", type=str,
        help="Checkpoint whose base weights w0 replace the stored ones", default=None)
    parser_analyze.add_argument("-r", "--rank", type=int,
        help="Subspace rank r (defaults to the adapter rank)", default=None)
    parser_analyze.add_argument("-p", "--pairwise", action="store_true",
        help="Emit projection norms between every ordered pair of checkpoints")
    parser_analyze.add_argument("-ns", "--no-svg", action="store_true",
        help="Skip singular value plots")
    parser_analyze.set_defaults(name="analyze")

    # Merge subcommand -----------------------------------------------------------------------
    parser_merge = subparsers.add_parser("merge", aliases=["mg"],
        help="Merge two checkpoints in output space and score their compatibility",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser_merge.add_argument("checkpoints", type=str, nargs=2,
        help="The two checkpoint files to merge")
    parser_merge.add_argument("-a", "--alphas", type=float, nargs=2,
        help="Strength of each adapter", default=[1.0, 1.0])
    parser_merge.add_argument("-pr", "--probe", type=int,
        help="Seed of the probe batches", default=0)
    parser_merge.add_argument("-r", "--rank", type=int,
        help="Subspace rank for the compatibility score (defaults to the adapter rank)", default=None)
    parser_merge.add_argument("-m", "--mode", type=str, choices=["output_sum", "epsilon_compose"],
        help="Sum the adapter branches, or compose each adapted output against the base", default="output_sum")
    parser_merge.add_argument("-w", "--weights", type=float, nargs=2,
        help="Composition weight of each adapter (epsilon_compose only; defaults to 1 1)", default=None)
    parser_merge.set_defaults(name="merge")

    # Gradcheck subcommand -----------------------------------------------------------------------
    parser_gradcheck = subparsers.add_parser("gradcheck", aliases=["gc"],
        help="Check tape gradients against finite differences",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser_gradcheck.add_argument("-s", "--seed", type=int,
        help="Seed for probe layers and inputs (defaults to train.seed)", default=None)
    parser_gradcheck.add_argument("-cg", "--corrupt-gradients", action="store_true",
        help="Debug: perturb the matmul adjoint so the check fails")
    parser_gradcheck.set_defaults(name="gradcheck")

    # Denoise report subcommand -----------------------------------------------------------------------
    parser_denoise = subparsers.add_parser("denoise-report", aliases=["dr"],
        help="Effective rank over refinement steps of a toy denoiser",
        formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    parser_denoise.add_argument("-c", "--checkpoint", type=str,
        help="Trained toy_denoise checkpoint (trains from the config when omitted)", default=None)
    parser_denoise.add_argument("-a", "--alphas", type=float, nargs="+",
        help="Adapter strengths to sweep", default=None)
    parser_denoise.add_argument("-ns", "--no-svg", action="store_true",
        help="Skip the effective rank plot")
    parser_denoise.add_argument("-cp", "--compose", type=str, nargs="+",
        help="Further toy_denoise checkpoints composed with the first one in composite.csv", default=None)
    parser_denoise.add_argument("-w", "--weights", type=float, nargs="+",
        help="Composition weight of every adapter set, the report's own first (defaults to all 1)", default=None)
    parser_denoise.set_defaults(name="denoise-report")

    return parser


def main(argv=None) -> int:

    parser = build_parser()

    # Extract the command line arguments
    args = vars(parser.parse_args(argv))
    if 'name' not in args:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE

    logging.basicConfig(level=getattr(logging, args['log_level']),
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        # API Setup and Configuration
        api = FouraAPI(config_path=args['config_file'], output_dir=args['out'])
        logger.info(f"Successfully validated configs in {args['config_file']}. Config: \n "
                    f"{pprint.pformat(api.config.echo())}")

        # Clean command keyword arguments
        sc_name = args['name']
        ignore_args = ['config_file', 'name', 'out', 'log_level']
        command_kwargs = {key: value for key, value in args.items()
                          if (not key in ignore_args) and (value is not None)}

        func_dict = {
            'train': api.train,
            'analyze': api.analyze,
            'merge': api.merge,
            'gradcheck': api.gradcheck,
            'denoise-report': api.denoise_report,
        }

        response = func_dict[sc_name](auto_save=True, **command_kwargs)

    except NumericalFailure as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_NUMERICAL
    except FouraError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_USAGE

    if sc_name == 'gradcheck' and not response.passed:
        return EXIT_NUMERICAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
