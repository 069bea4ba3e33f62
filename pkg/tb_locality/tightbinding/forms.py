import math
from dataclasses import dataclass, field, fields

from django import forms
from django.conf import settings

from .errors import ConfigurationError
from .geometry import read_json

MODEL_CHOICES = (
    ('toy', 'Модельная s-орбиталь'),
    ('nrl', 'NRL (spd, с перекрытием)'),
)
MU_MODE_CHOICES = (
    ('explicit', 'Явно заданное μ'),
    ('midgap', 'Середина щели'),
)
TOLERANCE_KEYS = {
    'UPSILON', 'M_MIN', 'CONTOUR_NODES', 'CONTOUR_MAX_NODES', 'CONTOUR_TOL', 'SINGULARITY_CLEARANCE',
    'MU_ON_SPECTRUM_TOL', 'DEGENERACY_TOL', 'FD_STEPS', 'RANK_TOL', 'FIT_FLOOR', 'FIT_WINDOW',
}


@dataclass(frozen=True)
class RunConfig:
    """Проверенная конфигурация запуска"""
    model: str = 'toy'
    params: str = ''
    toy: dict = field(default_factory=dict)
    geometry: object = None
    beta: float = math.inf
    mu_mode: str = 'midgap'
    mu: float | None = None
    defect: dict = field(default_factory=dict)
    sites: dict = field(default_factory=dict)
    locality: dict = field(default_factory=dict)
    bands: dict = field(default_factory=dict)
    experiment: str = ''
    output_dir: str = ''
    seed: int = 0
    threads: int = 1
    nodes: int | None = None
    tolerances: dict = field(default_factory=dict)

    def to_dict(self):
        data = {f.name: getattr(self, f.name) for f in fields(self)}
        data['beta'] = 'inf' if math.isinf(self.beta) else self.beta
        return data

    def settings_overrides(self):
        overrides = dict(self.tolerances)
        overrides['THREADS'] = self.threads
        if self.nodes:
            overrides['CONTOUR_NODES'] = self.nodes
        return overrides


class RunConfigForm(forms.Form):
    """Форма проверки JSON-конфигурации запуска"""
    model = forms.ChoiceField(choices=MODEL_CHOICES, required=False)
    params = forms.CharField(required=False, max_length=500)
    toy = forms.JSONField(required=False)
    geometry = forms.Field(required=False)
    beta = forms.CharField(required=False, max_length=40)
    mu_mode = forms.ChoiceField(choices=MU_MODE_CHOICES, required=False)
    mu = forms.FloatField(required=False)
    defect = forms.JSONField(required=False)
    sites = forms.JSONField(required=False)
    locality = forms.JSONField(required=False)
    bands = forms.JSONField(required=False)
    experiment = forms.CharField(required=False, max_length=64)
    output_dir = forms.CharField(required=False, max_length=500)
    seed = forms.IntegerField(required=False, min_value=0)
    threads = forms.IntegerField(required=False, min_value=1, max_value=256)
    nodes = forms.IntegerField(required=False, min_value=8)
    tolerances = forms.JSONField(required=False)

    def __init__(self, data=None, *args, **kwargs):
        self.unknown_keys = sorted(set(data or {}) - set(self.base_fields))
        super().__init__(data, *args, **kwargs)

    def clean_beta(self):
        value = self.cleaned_data.get('beta')
        if value in (None, ''):
            return math.inf
        if str(value).strip().lower() in ('inf', 'infinity', '∞'):
            return math.inf
        try:
            beta = float(value)
        except ValueError:
            raise forms.ValidationError("β должна быть числом или \"inf\"") from None
        if not beta > 0 or math.isnan(beta):
            raise forms.ValidationError("β должна быть положительной")
        return beta

    def _clean_object(self, name):
        value = self.cleaned_data.get(name)
        if value in (None, ''):
            return {}
        if not isinstance(value, dict):
            raise forms.ValidationError(f"Поле {name} должно быть объектом JSON")
        return value

    def clean_toy(self):
        return self._clean_object('toy')

    def clean_defect(self):
        return self._clean_object('defect')

    def clean_sites(self):
        return self._clean_object('sites')

    def clean_locality(self):
        return self._clean_object('locality')

    def clean_bands(self):
        return self._clean_object('bands')

    def clean_tolerances(self):
        value = self._clean_object('tolerances')
        unknown = set(value) - TOLERANCE_KEYS
        if unknown:
            raise forms.ValidationError(f"Неизвестные допуски: {', '.join(sorted(unknown))}")
        return value

    def clean_geometry(self):
        value = self.cleaned_data.get('geometry')
        if value in (None, ''):
            return None
        if not isinstance(value, (str, dict)):
            raise forms.ValidationError("Геометрия задаётся путём к файлу или объектом JSON")
        return value

    def clean(self):
        cleaned_data = super().clean()
        if self.unknown_keys:
            raise forms.ValidationError(f"Неизвестные ключи конфигурации: {', '.join(self.unknown_keys)}")
        mu_mode = cleaned_data.get('mu_mode') or 'midgap'
        if mu_mode == 'explicit' and cleaned_data.get('mu') is None:
            self.add_error('mu', "Для mu_mode=explicit нужно значение mu")
        if cleaned_data.get('model') == 'nrl' and not cleaned_data.get('params'):
            cleaned_data['params'] = str(settings.TB_SETTINGS['PARAMS_DIR'] / 'nrl_si.json')
        return cleaned_data

    def to_run_config(self):
        if not self.is_valid():
            raise ConfigurationError(self.error_text())
        data = self.cleaned_data
        defaults = RunConfig()
        return RunConfig(
            model=data.get('model') or defaults.model,
            params=data.get('params') or '',
            toy=data.get('toy') or {},
            geometry=data.get('geometry'),
            beta=data.get('beta', math.inf),
            mu_mode=data.get('mu_mode') or defaults.mu_mode,
            mu=data.get('mu'),
            defect=data.get('defect') or {},
            sites=data.get('sites') or {},
            locality=data.get('locality') or {},
            bands=data.get('bands') or {},
            experiment=data.get('experiment') or '',
            output_dir=data.get('output_dir') or '',
            seed=data.get('seed') or 0,
            threads=data.get('threads') or 1,
            nodes=data.get('nodes'),
            tolerances=data.get('tolerances') or {},
        )

    def error_text(self):
        parts = []
        for name, errors in self.errors.items():
            label = 'config' if name == '__all__' else name
            parts.append(f"{label}: {' '.join(errors)}")
        return '; '.join(parts)


def load_run_config(path=None, overrides=None):
    """Чтение JSON-файла, наложение флагов командной строки и проверка формой"""
    data = read_json(path) if path else {}
    if not isinstance(data, dict):
        raise ConfigurationError(f"{path}: ожидался объект JSON")
    for key, value in (overrides or {}).items():
        if value is not None:
            data[key] = value
    return RunConfigForm(data=data).to_run_config()
