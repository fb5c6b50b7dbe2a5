use std::collections::BTreeMap;
use std::path::PathBuf;

use super::{KalmanPredictor, MlpPredictor, MotionPredictor, OraclePredictor, Poly2Predictor};
use crate::error::{Error, Result};

/// What a factory may need to build its predictor.
#[derive(Debug, Clone, Default)]
pub struct PredictorOptions {
    /// Weight file for learned predictors.
    pub weights: Option<PathBuf>,
}

pub type PredictorFactory = fn(&PredictorOptions) -> Result<Box<dyn MotionPredictor>>;

/// Predictor constructors keyed by name.
#[derive(Debug, Clone)]
pub struct PredictorRegistry {
    factories: BTreeMap<String, PredictorFactory>,
}

impl Default for PredictorRegistry {
    fn default() -> Self {
        Self::with_builtins()
    }
}

impl PredictorRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// `kalman`, `poly2`, `mlp` and `oracle`.
    pub fn with_builtins() -> Self {
        let mut r = Self::empty();
        r.register("kalman", |_| Ok(Box::new(KalmanPredictor)))
            .expect("fresh registry");
        r.register("poly2", |_| Ok(Box::new(Poly2Predictor)))
            .expect("fresh registry");
        r.register("mlp", |opts| match &opts.weights {
            Some(path) => Ok(Box::new(MlpPredictor::load(path)?)),
            None => Err(Error::Usage("the mlp predictor needs --dp-weights".into())),
        })
        .expect("fresh registry");
        r.register("oracle", |_| Ok(Box::new(OraclePredictor)))
            .expect("fresh registry");
        r
    }

    pub fn register(&mut self, name: &str, factory: PredictorFactory) -> Result<()> {
        if self.factories.contains_key(name) {
            return Err(Error::Usage(format!(
                "predictor {name} is already registered"
            )));
        }
        self.factories.insert(name.to_string(), factory);
        Ok(())
    }

    pub fn names(&self) -> Vec<&str> {
        self.factories.keys().map(String::as_str).collect()
    }

    pub fn create(&self, name: &str, opts: &PredictorOptions) -> Result<Box<dyn MotionPredictor>> {
        match self.factories.get(name) {
            Some(f) => f(opts),
            None => Err(Error::Usage(format!(
                "unknown predictor {name}; available: {}",
                self.names().join(", ")
            ))),
        }
    }
}
