"""Hot numeric kernels: MLP forward/backprop, SGD epochs, EKF steps.

Both backends expose identical call signatures. Import from here rather than
from the backend modules so the ``UWBCAL_NO_NUMBA`` switch is honoured.
"""
from uwbcal._backend import BACKEND, USE_NUMBA

if USE_NUMBA:
    from uwbcal.kernels._numba import (
        ekf_predict,
        ekf_update,
        mlp_forward_batch,
        mlp_forward_one,
        mlp_loss_grad,
        range_jacobian,
        sgd_epoch,
    )
else:
    from uwbcal.kernels._numpy import (
        ekf_predict,
        ekf_update,
        mlp_forward_batch,
        mlp_forward_one,
        mlp_loss_grad,
        range_jacobian,
        sgd_epoch,
    )

__all__ = [
    "BACKEND",
    "ekf_predict",
    "ekf_update",
    "mlp_forward_batch",
    "mlp_forward_one",
    "mlp_loss_grad",
    "range_jacobian",
    "sgd_epoch",
]
