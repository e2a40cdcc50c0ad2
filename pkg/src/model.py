from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from src.autodiff import Tensor, as_tensor
from src.blocks import Linear, LSTMCellParams, ParamGroup, TABParams, cb_forward, tab_forward
from src.errors import ConfigurationError
from src.models import ModelConfig, ModelDims
from src.snippets import SnippetBank

logger = logging.getLogger("model")

INIT_SCHEME = "xavier_uniform; zero bias; layer-norm gain 1 bias 0"
ACTIVATION = "relu after every fusing linear layer"


@dataclass
class ClassifierParams(ParamGroup):
    action_head: Linear
    activity_head: Linear | None = None


@dataclass
class DenseParams(ParamGroup):
    duration_head: Linear
    rollout_in: Linear
    rnn: LSTMCellParams
    step_action: Linear
    step_duration: Linear


@dataclass
class ModelParams(ParamGroup):
    """Every learnable weight of the temporal aggregate model."""

    config: ModelConfig
    dims: ModelDims
    tabs: list[TABParams]
    classifier: ClassifierParams
    dense: DenseParams | None = None

    @classmethod
    def init(cls, config: ModelConfig, dims: ModelDims, rng: np.random.Generator) -> ModelParams:
        n_tabs = 1 if (config.single_tab or not config.use_tab) else dims.n_recent
        n_scales = 1 if (config.single_cb or not config.use_tab) else dims.n_scales
        tabs = [TABParams.init(dims.n_features, n_scales, config, rng) for _ in range(n_tabs)]
        hidden = config.hidden

        activity_head = None
        if config.use_activity and dims.n_activities > 0:
            activity_head = Linear.init(n_tabs * hidden, dims.n_activities, rng)
        classifier = ClassifierParams(action_head=Linear.init(hidden, dims.n_actions, rng), activity_head=activity_head)

        dense = None
        if dims.n_duration_bins > 0:
            rollout_width = 2 * n_tabs * hidden + n_tabs * dims.n_actions
            step_input = config.rnn_hidden + dims.n_actions + dims.n_duration_bins
            dense = DenseParams(
                duration_head=Linear.init(n_tabs * hidden, dims.n_duration_bins, rng),
                rollout_in=Linear.init(rollout_width, config.rnn_hidden, rng),
                rnn=LSTMCellParams.init(step_input, config.rnn_hidden, rng),
                step_action=Linear.init(config.rnn_hidden, dims.n_actions, rng),
                step_duration=Linear.init(config.rnn_hidden, dims.n_duration_bins, rng),
            )
        model = cls(config=config, dims=dims, tabs=tabs, classifier=classifier, dense=dense)
        logger.debug(f"Initialised {len(model.parameters())} parameter tensors ({model.size()} values)")
        return model

    @property
    def n_tabs(self) -> int:
        return len(self.tabs)

    def parameters(self) -> dict[str, Tensor]:
        return self.named_parameters()

    def size(self) -> int:
        return sum(p.data.size for p in self.parameters().values())

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        params = self.parameters()
        if set(arrays) != set(params):
            missing = sorted(set(params) - set(arrays))
            extra = sorted(set(arrays) - set(params))
            raise ConfigurationError(f"Parameter names do not match the model (missing {missing}, extra {extra})")
        for name, param in params.items():
            if arrays[name].shape != param.shape:
                raise ConfigurationError(f"Shape of {name} is {arrays[name].shape}, model expects {param.shape}")
            param.data = np.array(arrays[name], dtype=param.data.dtype)

    def encode(
        self, bank: SnippetBank, training: bool = False, rng: np.random.Generator | None = None
    ) -> list[tuple[Tensor, Tensor]]:
        """Temporal aggregates (recent, spanning) for every active recent start."""
        if len(bank.recent) != self.dims.n_recent or len(bank.spanning) != self.dims.n_scales:
            raise ConfigurationError(
                f"Bank has {len(bank.recent)} recent / {len(bank.spanning)} spanning entries, "
                f"model expects {self.dims.n_recent} / {self.dims.n_scales}"
            )
        spanning = [as_tensor(s) for s in bank.spanning[: len(self.tabs[0].blocks)]]
        aggregates = []
        for tab, recent in zip(self.tabs, bank.recent):
            recent_t = as_tensor(recent)
            if self.config.use_tab:
                aggregates.append(tab_forward(recent_t, spanning, tab, self.config, training, rng))
            else:
                aggregates.append(cb_forward(recent_t, spanning[0], tab.blocks[0], self.config, training, rng))
        return aggregates
