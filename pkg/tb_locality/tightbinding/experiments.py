"""Сценарии команд: bands, sites, locality, defect, ct_audit."""
import logging
from dataclasses import replace
from pathlib import Path

import numpy as np
from django.conf import settings
from scipy import linalg

from . import reports
from .bands import KPath, band_structure, relax_lattice
from .builders import from_spec
from .defects import (
    DefectSpec,
    build_defect,
    correction_decay,
    decompose_system,
    defect_system,
    dense_resolvent_action,
    gap_level,
    offdiagonal_decay_audit,
    tweak_interstitial,
    woodbury_resolvent,
)
from .errors import ConfigurationError, ContourError, DefectError, LocalityError
from .geometry import Configuration, load_configuration, read_json
from .locality import (
    LocalitySystem,
    beta_sweep,
    collect_decay,
    compare_defect_prefactor,
    force_site_ratios,
    matrix_decay,
)
from .model import DerivativeEngine, ToyModel, assemble
from .nrl import load_nrl_params
from .sites import (
    ROUTE_ANALYTIC,
    ROUTE_CONTOUR,
    ROUTE_SPECTRAL,
    forces,
    mu_on_spectrum_correction,
    site_energies_contour,
    site_energies_spectral,
    site_energy_gradients,
    site_energy_gradients_spectral,
    site_energy_hessians,
)
from .spectral import defect_state_counts, midgap, occupations, solve
from .thermo import (
    GrandPotentialFn,
    audit_contour,
    build_contour,
    contour_quadrature,
    node_margins,
    node_values,
    track_branch,
)

logger = logging.getLogger(__name__)

DEFECT_OPTIONS = {'delta', 'shift', 'state_deltas', 'n_z', 'tweak', 'correction_im'}


def _params_path(value, default):
    """Путь к файлу параметров; имя без каталога ищется в PARAMS_DIR"""
    params_dir = Path(settings.TB_SETTINGS['PARAMS_DIR'])
    if not value:
        return params_dir / default
    path = Path(value)
    if not path.exists() and (params_dir / path).exists():
        return params_dir / path
    return path


def build_model(run_config):
    """Модель по конфигурации: toy с наложением параметров или NRL из файла"""
    if run_config.model == 'nrl':
        return load_nrl_params(_params_path(run_config.params, 'nrl_si.json'))
    data = dict(read_json(_params_path(run_config.params, 'toy.json')))
    data.update(run_config.toy)
    return ToyModel.from_dict(data)


def resolve_geometry(value):
    """Путь к JSON-файлу, описание построителя или явная геометрия"""
    if value is None:
        raise ConfigurationError("В конфигурации не задана геометрия")
    if isinstance(value, dict):
        if 'builder' in value:
            return from_spec(value)
        return Configuration.from_dict(value)
    path = Path(value)
    if not path.exists() and not path.is_absolute():
        bundled = Path(__file__).resolve().parent / 'configs' / path
        if bundled.exists():
            path = bundled
    return load_configuration(path)


def n_electrons(model, config):
    return sum(model.valence(s) for s in config.species)


def resolve_mu(run_config, model, config, spec):
    if run_config.mu_mode == 'explicit':
        return float(run_config.mu)
    mu, homo, lumo = midgap(spec.eigenvalues, n_electrons(model, config))
    logger.info(f"μ в середине щели: {mu:.6f} эВ (HOMO {homo:.6f}, LUMO {lumo:.6f})")
    return mu


class Experiment:
    """Модель, геометрия, спектр и g^β одного запуска"""

    def __init__(self, run_config):
        self.run_config = run_config
        self.model = build_model(run_config)
        self.config = resolve_geometry(run_config.geometry)
        self.pair = assemble(self.model, self.config)
        spec = solve(self.pair)
        self.mu = resolve_mu(run_config, self.model, self.config, spec)
        self.spec = spec.with_mu(self.mu)
        self.fn = GrandPotentialFn(run_config.beta, self.mu)

    def contour(self):
        mode = 'zero-T' if self.fn.zero_temperature else 'finite-T'
        return build_contour(self.spec, self.fn, mode=mode)

    def describe(self):
        return {
            'model': self.model.name,
            'n_sites': self.config.n_sites,
            'n_orbitals': self.pair.n_orbitals,
            'beta': self.fn.beta,
            'mu_eV': self.mu,
            'd_mu_eV': self.spec.d_mu,
            'gap_eV': self.spec.gap_g,
        }


def run_bands(run_config, writer):
    """Зонная структура периодической ячейки: CSV, SVG и сводка щели"""
    model = build_model(run_config)
    config = resolve_geometry(run_config.geometry)
    if not config.periodic:
        raise ConfigurationError("Команда bands требует периодической геометрии")
    options = dict(run_config.bands)
    summary = {}
    if options.get('relax'):
        relaxed = relax_lattice(
            model, config, bounds=tuple(options.get('relax_bounds', (0.9, 1.1))),
            mesh=tuple(options.get('mesh', (4, 4, 4))),
        )
        config = relaxed.config
        summary['lattice_scale'] = relaxed.scale
        summary['band_energy_eV'] = relaxed.energy
    if 'points' in options:
        path = KPath.explicit(options.get('labels') or [str(i) for i in range(len(options['points']))],
                              options['points'], options.get('n_points'))
    else:
        path = KPath.from_ase(config.cell, options.get('path'), options.get('n_points'))
    structure = band_structure(model, config, path)
    mu = float(run_config.mu) if run_config.mu_mode == 'explicit' else structure.fermi_mu
    writer.write_csv('bands.csv', reports.BAND_HEADER, structure.rows())
    writer.save_figure('bands.svg', reports.plot_bands(structure, f"{model.name}: {''.join(path.labels)}"))
    summary.update(structure.summary())
    summary['mu_eV'] = mu
    summary['path'] = ''.join(path.labels)
    return summary


def _derivative_sites(options, config):
    sites = options.get('derivative_sites', [0])
    if sites == 'all':
        return list(range(config.n_sites))
    sites = [int(s) for s in (sites if isinstance(sites, list) else [sites])]
    for s in sites:
        if not 0 <= s < config.n_sites:
            raise ConfigurationError(f"Узел {s} вне конфигурации из {config.n_sites} узлов")
    return sites


def run_sites(run_config, writer):
    """Энергии узлов двумя путями, производные и силы"""
    exp = Experiment(run_config)
    options = dict(run_config.sites)
    spectral = site_energies_spectral(exp.spec, exp.fn)
    reports_list = [spectral]
    summary = exp.describe()
    summary.update({
        'total_eV': spectral.total,
        'split_relative_spectral': spectral.relative_split,
    })
    contour = None
    try:
        contour = exp.contour()
    except ContourError as exc:
        logger.warning(f"Контурный путь недоступен: {exc}")
        summary['contour_error'] = str(exc)
    if contour is not None:
        via_contour = site_energies_contour(exp.pair, contour, exp.fn)
        reports_list.append(via_contour)
        summary['split_relative_contour'] = via_contour.relative_split
        summary['max_route_difference_eV'] = float(np.max(np.abs(via_contour.values - spectral.values)))
        summary['contour_nodes'] = via_contour.n_nodes
        summary['contour_mode'] = contour.mode
        if contour.mode == 'mu-split':
            correction = mu_on_spectrum_correction(exp.spec, exp.fn, contour.subcontour(taylor=True))
            summary['mu_split_correction_eV'] = float(np.sum(correction.values))
            summary['mu_split_prefactor'] = correction.prefactor
    writer.write_csv(
        'site_energies.csv', reports.SITE_ENERGY_HEADER,
        (row for report in reports_list for row in report.rows(exp.config)),
    )
    writer.write_csv(
        'spectrum.csv', reports.SPECTRUM_HEADER, reports.spectrum_rows(exp.spec, occupations(exp.spec, exp.fn)),
    )

    distances = exp.config.distance_matrix()
    gradient_rows, hessian_rows = [], []
    use_contour = contour is not None and exp.model.orthogonal and options.get('route', ROUTE_CONTOUR) == ROUTE_CONTOUR
    engine = DerivativeEngine(exp.model, exp.config, order=min(2, exp.model.nu))
    for ell in _derivative_sites(options, exp.config):
        if use_contour:
            gradient = site_energy_gradients(exp.pair, exp.model, contour, exp.fn, ell, engine)
            route = ROUTE_ANALYTIC
        else:
            gradient = site_energy_gradients_spectral(exp.spec, exp.fn, engine, ell)
            route = ROUTE_SPECTRAL
        gradient_rows.extend(reports.gradient_rows(ell, gradient, distances, route))
        if options.get('hessian'):
            if contour is None:
                raise ContourError("Гессиан энергии узла требует контура")
            hessian = site_energy_hessians(exp.pair, exp.model, contour, exp.fn, ell, engine)
            route = ROUTE_ANALYTIC if exp.model.orthogonal else 'finite-difference'
            hessian_rows.extend(reports.hessian_rows(ell, hessian, distances, route))
    writer.write_csv('site_gradients.csv', reports.GRADIENT_HEADER, gradient_rows)
    if hessian_rows:
        writer.write_csv('site_hessians.csv', reports.HESSIAN_HEADER, hessian_rows)

    force_report = forces(exp.pair, exp.model, exp.fn, spec=exp.spec, engine=engine)
    writer.write_csv(
        'forces.csv', ('site', 'fx', 'fy', 'fz'),
        ((m, *map(float, f)) for m, f in enumerate(force_report.forces)),
    )
    summary['net_force'] = float(np.linalg.norm(force_report.net_force))
    return summary


def _fit_or_none(dataset, window=None, bin_width=None):
    try:
        return dataset.with_fit(window, bin_width)
    except LocalityError as exc:
        logger.warning(f"Подгонка {dataset.label} не выполнена: {exc}")
        return dataset


def _fit_summary(dataset):
    if dataset.fit is None:
        return None
    fit = dataset.fit
    return {
        'exponent': fit.exponent,
        'log_prefactor': fit.log_prefactor,
        'r_squared': fit.r_squared,
        'window': list(fit.window),
        'n_bins': fit.n_bins,
        'n_points': len(dataset),
    }


def defect_spec_from(data):
    """Описание дефекта и опции команды из одного объекта"""
    data = dict(data)
    options = {key: data.pop(key) for key in DEFECT_OPTIONS if key in data}
    return DefectSpec.from_dict(data), options


def _write_dataset(writer, name, dataset, title=''):
    writer.write_csv(f'{name}.csv', reports.DECAY_HEADER, dataset.rows())
    writer.save_figure(f'{name}.svg', reports.plot_decay([dataset], title or dataset.label))


def run_locality(run_config, writer):
    """Наборы затухания производных, подгонки, силы и сравнение с дефектом"""
    exp = Experiment(run_config)
    options = dict(run_config.locality)
    selection = options.get('selection', 'all')
    window = options.get('window')
    bin_width = options.get('bin_width')
    system = LocalitySystem(exp.model, exp.config, exp.fn, route=options.get('route'))
    summary = exp.describe()
    fits = {}
    site_fits = {}
    for order in options.get('orders', [1, 2]):
        dataset = _fit_or_none(collect_decay(system, selection, order=int(order)), window, bin_width)
        _write_dataset(writer, f'decay_{dataset.kind}', dataset)
        fits[dataset.kind] = _fit_summary(dataset)
        if dataset.fit is not None:
            site_fits[int(order)] = dataset.fit
    if options.get('matrix', True):
        dataset = _fit_or_none(matrix_decay(system, selection), window, bin_width)
        _write_dataset(writer, f'decay_{dataset.kind}', dataset)
        fits[dataset.kind] = _fit_summary(dataset)
    if options.get('forces', True):
        dataset = _fit_or_none(collect_decay(system, selection, force_mode=True), window, bin_width)
        _write_dataset(writer, f'decay_{dataset.kind}', dataset)
        fits[dataset.kind] = _fit_summary(dataset)
        if dataset.fit is not None and site_fits:
            ratios = force_site_ratios(site_fits, dataset.fit)
            writer.write_csv(
                'force_site_ratio.csv', ('order', 'site_exponent', 'force_exponent', 'ratio'),
                ((r.order, r.site_exponent, r.force_exponent, r.ratio) for r in ratios),
            )
            summary['force_site_ratios'] = {str(r.order): r.ratio for r in ratios}
    summary['fits'] = fits

    if run_config.defect:
        summary['defect'] = _defect_locality(exp, system, run_config, writer, window, bin_width)

    betas = options.get('betas')
    if betas:
        quantity = options.get('sweep_quantity', 'site-energy')
        rows = beta_sweep(system, [float(b) for b in betas], quantity, options.get('sweep_site', 0), window)
        writer.write_csv(
            'beta_sweep.csv', ('beta', 'exponent', 'log_prefactor', 'r_squared'),
            ((r.beta, r.exponent, r.log_prefactor, r.r_squared) for r in rows),
        )
        summary['beta_sweep'] = [{'beta': r.beta, 'exponent': r.exponent} for r in rows]
    return summary


def _tweak(model, config_ref, spec, mu, options):
    tweak = options.get('tweak')
    if not tweak:
        return None
    return tweak_interstitial(
        model, config_ref, spec, mu, tweak.get('direction', (1.0, 1.0, 1.0)),
        tuple(tweak.get('bounds', (-0.2, 0.2))), target=float(tweak.get('target', 1e-2)),
    )


def _defect_locality(exp, bulk_system, run_config, writer, window, bin_width):
    spec, options = defect_spec_from(run_config.defect)
    result = _tweak(exp.model, exp.config, spec, exp.mu, options)
    if result is None:
        config_def = build_defect(exp.config, spec)
    else:
        config_def, spec = result.config, result.spec
    defect_sys = LocalitySystem(
        exp.model, config_def, exp.fn, route=bulk_system.route, center=spec.center(exp.config),
    )
    far_site = int(np.argmax(defect_sys.defect_distances()))
    bulk_site = int(np.argmin(exp.config.distances_from_point(config_def.positions[far_site])))
    datasets = [
        _fit_or_none(replace(collect_decay(system, selection), label=label), window, bin_width)
        for system, selection, label in (
            (bulk_system, [bulk_site], 'bulk'),
            (defect_sys, 'farthest-from-defect', 'defect-far'),
            (defect_sys, 'defect-site', 'defect-near'),
        )
    ]
    writer.write_csv(
        'decay_defect.csv', reports.DECAY_HEADER,
        (row for dataset in datasets for row in dataset.rows()),
    )
    writer.save_figure('decay_defect.svg', reports.plot_decay(datasets, 'объём и дефект'))
    summary = {
        'fits': {dataset.label: _fit_summary(dataset) for dataset in datasets},
        'gap_level_eV': gap_level(defect_sys.spec, exp.spec, exp.mu),
    }
    if result is not None:
        summary['tweak_offset'] = result.offset
    if any(dataset.fit is None for dataset in datasets):
        summary['comparison'] = None
        logger.warning("Сравнение префакторов пропущено: не все наборы удалось подогнать")
        return summary
    comparison = compare_defect_prefactor(*datasets)
    summary.update({
        'exponent_bulk': comparison.exponent_bulk,
        'exponent_far': comparison.exponent_far,
        'exponent_near': comparison.exponent_near,
        'exponent_deviation': comparison.exponent_deviation,
        'prefactor_ratio_far': comparison.prefactor_ratio_far,
        'prefactor_ratio_near': comparison.prefactor_ratio_near,
        'near_exceeds': comparison.near_exceeds,
    })
    return summary


def sample_z(eigenvalues, count, seed, margin=1e-3):
    """Случайные z вне вещественной оси с запасом до спектра не меньше margin"""
    rng = np.random.default_rng(seed)
    lo, hi = float(np.min(eigenvalues)), float(np.max(eigenvalues))
    x = rng.uniform(lo, hi, count)
    y = rng.uniform(0.05, 1.0, count) * rng.choice([-1.0, 1.0], count)
    z = x + 1j * np.where(np.abs(y) < margin, margin, y)
    return z


def run_defect(run_config, writer):
    """Разложение дефектного гамильтониана, дефектные уровни и проверка Вудбери"""
    if not run_config.defect:
        raise ConfigurationError("Команда defect требует описания дефекта")
    model = build_model(run_config)
    config_ref = resolve_geometry(run_config.geometry)
    spec, options = defect_spec_from(run_config.defect)
    reference = solve(assemble(model, config_ref))
    mu = resolve_mu(run_config, model, config_ref, reference)
    summary = {'kind': spec.kind, 'mu_eV': mu}
    config_def = None
    result = _tweak(model, config_ref, spec, mu, options)
    if result is not None:
        config_def, spec = result.config, result.spec
        summary['tweak_offset'] = result.offset
        summary['tweak_level_eV'] = result.level
    system = defect_system(model, config_ref, spec, shift=float(options.get('shift', 0.0)), config_def=config_def)
    defective = solve(assemble(model, system.config_def))
    deltas = options.get('state_deltas', [1e-3, 1e-2, 1e-1])
    counts = defect_state_counts(defective, reference, deltas)
    writer.write_csv('defect_states.csv', ('delta_eV', 'count'), counts)
    summary['gap_level_eV'] = gap_level(defective, reference, mu)

    decomposition = decompose_system(system, float(options.get('delta', 1e-8)))
    writer.write_text('decomposition.txt', reports.decomposition_text(
        decomposition, {'kind': spec.kind, 'n_union_sites': system.alignment.n_union},
    ))
    summary['decomposition'] = decomposition.summary()

    exact_action = dense_resolvent_action(system.H_def)
    ref_action = dense_resolvent_action(system.H_ref + decomposition.P1.toarray())
    n = system.H_def.shape[0]
    rhs = np.eye(n)
    rows = []
    for z in sample_z(linalg.eigvalsh(system.H_def), int(options.get('n_z', 20)), run_config.seed):
        result = woodbury_resolvent(ref_action, decomposition.U, decomposition.V, z, rhs)
        error = float(np.max(np.abs(result.columns - exact_action(z, rhs))))
        rows.append((float(z.real), float(z.imag), error, result.condition))
    writer.write_csv('woodbury.csv', ('re_z', 'im_z', 'max_error', 'condition'), rows)
    summary['woodbury_max_error'] = max(r[2] for r in rows)

    z0 = complex(mu, float(options.get('correction_im', 0.5)))
    dataset = _fit_or_none(correction_decay(system, decomposition, z0))
    _write_dataset(writer, 'decay_C', dataset)
    summary['correction_fit'] = _fit_summary(dataset)
    return summary


def run_ct_audit(run_config, writer):
    """Дамп и проверка контура, ветвь продолжения, разбиение единицы и затухание резольвенты"""
    exp = Experiment(run_config)
    options = dict(run_config.locality)
    contour = exp.contour()
    audit = audit_contour(contour)
    spectrum_margins, singularity_margins = node_margins(contour)
    abs_g = np.abs(node_values(contour))
    writer.write_csv(
        'contour.csv', reports.CONTOUR_HEADER,
        reports.contour_rows(contour, abs_g, spectrum_margins, singularity_margins),
    )
    branch = [track_branch(exp.fn, piece.boundary()) for piece in contour.pieces if piece.taylor_order is None]
    summary = exp.describe()
    summary.update({
        'contour_mode': contour.mode,
        'n_nodes': contour.n_nodes,
        'audit_passed': audit.passed,
        'audit_issues': list(audit.issues),
        'margin_spectrum': audit.margin_spectrum,
        'margin_singularity': audit.margin_singularity,
        'max_abs_g': audit.max_abs_g,
        'branch_max_jump': max((b.max_jump for b in branch), default=0.0),
        'branch_max_deviation': max((b.max_deviation for b in branch), default=0.0),
    })
    writer.write_json('contour_audit.json', {
        'passed': audit.passed,
        'issues': list(audit.issues),
        'winding_enclosed': audit.winding_enclosed,
        'winding_excluded': audit.winding_excluded,
        'winding_branch': audit.winding_branch,
    })

    pair, spec = exp.pair, exp.spec
    M = pair.M.astype(complex)

    def resolvent_times_m(z):
        return linalg.solve(pair.H - z * pair.M, M)

    full = contour.subcontour(taylor=False)
    identity = contour_quadrature(full, resolvent_times_m).value
    enclosed = list(full.encloses)
    projector = spec.eigenvectors[:, enclosed] @ spec.m_vectors[:, enclosed].T
    summary['identity_error'] = float(np.max(np.abs(identity - projector)))

    distances = options.get('ct_distances', [0.1, 0.5, 1.0])
    audits = []
    for d in distances:
        z = complex(exp.mu, float(d))
        resolvent = linalg.inv(pair.H - z * pair.M)
        distance = float(np.min(np.abs(spec.eigenvalues - z)))
        try:
            result = offdiagonal_decay_audit(resolvent, exp.config, z, distance, offsets=pair.offsets,
                                             sources=options.get('ct_sources', [0]))
        except (LocalityError, DefectError) as exc:
            logger.warning(f"Оценка затухания резольвенты при z={z} пропущена: {exc}")
            continue
        name = f'ct_decay_{len(audits)}'
        _write_dataset(writer, name, result.dataset)
        audits.append({
            'z_im': float(d),
            'spectrum_distance': result.spectrum_distance,
            'exponent': result.dataset.fit.exponent,
            'log_prefactor': result.dataset.fit.log_prefactor,
            'bound_intercept': result.bound_intercept,
            'passed': result.passed,
        })
    summary['combes_thomas'] = audits
    return summary
