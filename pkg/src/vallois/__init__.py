"""Local-time Skorokhod embeddings, robust hedges of local-time payoffs and
the nested-stop martingale with Gaussian marginals."""

from .embedding import (EmbeddingMap, GeneralEmbedding, ReversedEmbedding, build_phi_general,
                        build_psi, build_reversed_psi, local_time_tail)
from .errors import ConfigError, ValloisError
from .hedging import (ConvexPayoff, HedgePlan, analytic_price, build_sub_hedge,
                      build_super_hedge, check_relations, eval_delta, eval_u)
from .marginal import (DeltaMu, DensitySpec, SymmetricMarginal, convex_order_check, tail_mass,
                       validate_marginal)
from .simulate import (EmpiricalCDF, SimConfig, ks_distance, simulate_sequential,
                       simulate_stopped)
from .two_marginal import (TwoMarginalEmbedding, build_psi2, check_assumptions,
                           implied_density)
from .fake_bm import (PeacockFamily, build_peacock, conditional_expectation, generator_apply,
                      simulate_fake_bm)

__version__ = "0.1.0"
