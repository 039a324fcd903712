use crate::numcore::{Bound, LstmVars, ParamId, ParamSet, Tensor};

/// Parameter ids of one LSTM layer registered under `{prefix}.w_x` etc.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct LstmIds {
    pub w_x: ParamId,
    pub w_h: ParamId,
    pub b: ParamId,
}

impl LstmIds {
    pub fn register(params: &mut ParamSet, prefix: &str, input: usize, width: usize) -> Self {
        LstmIds {
            w_x: params.add(format!("{prefix}.w_x"), Tensor::zeros(&[input, 4 * width])),
            w_h: params.add(format!("{prefix}.w_h"), Tensor::zeros(&[width, 4 * width])),
            b: params.add(format!("{prefix}.b"), Tensor::zeros(&[1, 4 * width])),
        }
    }

    pub fn bind(&self, b: &Bound) -> LstmVars {
        LstmVars {
            w_x: b.var(self.w_x),
            w_h: b.var(self.w_h),
            b: b.var(self.b),
        }
    }
}
