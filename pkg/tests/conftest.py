import numpy as np
import pandas as pd
import pytest

from psbalance import Dataset, validate_dataset

# 20-row logistic/outcome fixture; oracle coefficients were computed with an
# independent root-finder (BFGS + Levenberg-Marquardt polish on the score
# equation) and a dense normal-equations solve, then frozen here.
FIX20_X1 = (0.760577, -0.264283, -0.142356, 0.477986, 0.137419, -1.096139,
            -0.658008, 0.105337, -0.033552, 0.708215, 0.496781, -1.168648,
            -0.325258, -0.572252, 0.78886, 0.027658, 0.04772, 0.776234,
            0.658251, 0.035138)
FIX20_X2 = (-0.086208, -1.54163, -0.430191, 0.204644, 0.223186, -0.724751,
            -0.685197, 1.096487, -0.044882, -2.287509, 0.197644, 0.117686,
            -0.277054, -0.720694, 0.634389, -2.047281, 0.71719, 0.62197,
            1.333996, 0.616927)
FIX20_Z = (1, 1, 0, 0, 0, 1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 1, 0, 0, 0, 1)
FIX20_Y = (6.243664, 5.274295, 0.495169, 1.804886, 2.262534, 4.651827,
           4.689003, 3.787874, 4.790583, 6.907293, 3.8383, -0.064368,
           1.728943, 1.766543, 2.262485, 6.500594, -0.407507, 2.382209,
           2.314416, 4.95717)

FIX20_BETA_ORACLE = (-0.3768989822694817, 0.03285249369772727, -1.2170065869272784)
FIX20_ALPHA1_ORACLE = (4.952938512263564, 0.9796253909865286, -0.6368213088003222)
FIX20_ALPHA0_ORACLE = (1.6932413508593098, 1.7285663339357982, -0.8665110379199463)


@pytest.fixture(scope="session")
def fix20() -> Dataset:
    df = pd.DataFrame({"Z": FIX20_Z, "X1": FIX20_X1, "X2": FIX20_X2, "Y": FIX20_Y})
    return validate_dataset(df, "Z", "Y")


def make_dataset(e_scores, z, y, seed=0):
    """Small synthetic dataset with one covariate; e_scores are carried by tests."""
    rng = np.random.default_rng(seed)
    n = len(z)
    return Dataset(
        treatment=np.asarray(z, dtype=int),
        outcome=np.asarray(y, dtype=float),
        covariates=rng.normal(size=(n, 1)),
        covariate_names=("X1",),
    )


@pytest.fixture(scope="session")
def poor_overlap_dataset() -> Dataset:
    """N=1200 single-covariate set with strong treated/control separation."""
    rng = np.random.default_rng(20250811)
    n = 1200
    x = rng.normal(0.0, 1.0, n)
    e = 1.0 / (1.0 + np.exp(-(0.2 + 3.0 * x)))
    z = (rng.random(n) < e).astype(int)
    y = 1.0 + 2.0 * x + 1.5 * z + rng.normal(0.0, 1.0, n)
    return Dataset(treatment=z, outcome=y, covariates=x[:, None], covariate_names=("X1",))
