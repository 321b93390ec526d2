"""cheems: a hybrid state-space / attention sequence model with
product-key experts, built on a small numpy reverse-mode autodiff engine.

The pieces compose bottom-up: the tensor engine carries values and
gradients; rotary tables encode position; the state-space layer mixes the
sequence in linear time (and quadratically, for checking); attention with
a state-space inner function extracts from the compressed recurrent state;
the expert mixture stores per-token knowledge; the model stacks them 7:1;
the harness trains on synthetic recall tasks and benchmarks scaling.
"""

from . import tensor
from .attention import AttnConfig, AttnLayerParams, attention_forward, causal_mask, init_attn_params
from .cdmmoe import (CdmmoeConfig, CdmmoeParams, cdmmoe_forward, count_params, cross_domain,
                     init_cdmmoe_params, retrieve_experts)
from .errors import (CheemsError, ConfigError, ContractError, InputError, NonFiniteError,
                     RangeError, ShapeError)
from .gradcheck import fd_gradcheck
from .harness import (AdamW, AdamWConfig, MqarConfig, Schedule, SelectiveCopyConfig, TaskSample,
                      bench_throughput, evaluate, lr_at, make_batch, masked_accuracy,
                      mqar_generate, selective_copy_generate, train)
from .model import (CheemsModel, ModelConfig, build_model, load_checkpoint, model_config_from_dict,
                    save_checkpoint)
from .rope import RopeTable, apply_rope, build_rope_table
from .seeds import stream, stream_seed
from .ssd import (SsdConfig, SsdLayerParams, init_ssd_params, segsum, ssd_chunked,
                  ssd_layer_forward, ssd_quadratic)
from .tensor import Tensor, backward, no_grad
from .vectors import build_vector_cases, export_vectors

__version__ = "0.1.0"
