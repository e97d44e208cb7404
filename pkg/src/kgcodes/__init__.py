"""Hierarchy-aligned discrete codes for knowledge-graph entities."""

from .data import FeatureFile, KgDataset, load_triples, save_triples, synth_hier_kg
from .fusion import FusedEmbedding, StructEmbedding, fuse, train_struct
from .gse import GseConfig, loss_gse, loss_l1, loss_l2
from .gsr import GsrConfig, decode, init_decoder, loss_gsr
from .hierarchy import HierarchyTree, build_tree
from .quantizer import (CodeAssignment, Codebooks, assign, encode,
                        init_codebooks, init_encoder, load_checkpoint, loss_q,
                        quantize, save_checkpoint)
from .trainer import (EntropyLog, TrainConfig, codebook_entropy, run,
                      select_checkpoint, train_step)

__version__ = "0.1.0"
