from tightbinding.errors import ConfigurationError, InvariantFailure
from tightbinding.experiments import build_model
from tightbinding.verification import _AsymmetricToyModel, run_suite

from ._base import TightBindingCommand


class Command(TightBindingCommand):
    help = "Проверка инвариантов на небольших модельных системах"
    name = 'verify'

    def add_arguments(self, parser):
        super().add_arguments(parser)
        parser.add_argument(
            '--broken-symmetry', action='store_true',
            help="Модель с нарушенной симметрией ядра (проверка, что набор ловит нарушение)",
        )

    def handle(self, *args, **options):
        self.broken_symmetry = options.get('broken_symmetry', False)
        return super().handle(*args, **options)

    def run(self, run_config, writer):
        if run_config.model != 'toy':
            raise ConfigurationError("Набор проверок рассчитан на модельную s-орбиталь (--model toy)")
        model = build_model(run_config)
        if self.broken_symmetry:
            model = _AsymmetricToyModel(
                onsite_energies=model.onsite_energies, t0=model.t0, kappa=model.kappa, cutoff=model.cutoff,
                valence_electrons=model.valence_electrons, r_min=model.r_min,
            )
        checks = run_suite(model, seed=run_config.seed)
        writer.write_csv(
            'verify.csv', ('invariant', 'measured', 'tolerance', 'passed', 'detail'),
            (check.row() for check in checks),
        )
        failures = [f"{c.name}: {c.measured:.3e} > {c.tolerance:.1e}" for c in checks if not c.passed]
        if failures:
            raise InvariantFailure(f"Нарушено инвариантов: {len(failures)} из {len(checks)}", failures)
        return {'checks': len(checks), 'passed': len(checks)}
