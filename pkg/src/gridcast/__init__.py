"""gridcast: per-region, multi-horizon power-outage count forecasting.

A count-forecasting toolkit built around a dual-block sequence-to-sequence
LSTM with a Poisson rate head, trained from scratch (manual
backpropagation through time, Adam), plus the surrounding pipeline:
CSV ingestion, quantile filtering, Gaussian denoising, min-max scaling,
PCA, Moran's I spatial screening, error metrics, and a synthetic-data
oracle for end-to-end validation.
"""

from .checkpoint import checkpoint_load, checkpoint_save
from .metrics import mae, mape, mdape, r2, report_per_region, rmse, smape
from .model import (AdamState, ModelConfig, Seq2SeqModel, TrainConfig,
                    adam_step, backward, decoder_forward, encoder_forward,
                    forecast, init_params, loss_mse, loss_poisson_nll,
                    loss_select, lstm_cell_forward, seq2seq_forward, train)
from .preprocess import (PcaModel, ScalerParams, SupervisedSet,
                         add_temporal_features, denoise, pca_fit,
                         pca_transform, quantile_filter, scale_apply,
                         scale_fit, scale_invert, series_to_supervised,
                         train_test_split)
from .spatial import (MoranResult, SpatialWeights, morans_i,
                      morans_significance, weights_from_coordinates)
from .synth import SynthSpec, generate, oracle_nll

__version__ = "0.1.0"
