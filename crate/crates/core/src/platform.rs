//! A platform bundles the host clock, its power domains, the matching energy
//! model and the registered accelerators.

use crate::accel::{AccelError, AcceleratorSpec, Stage};
use crate::model::{
    merge_models, validate_energy_model, ClockConfig, DomainKind, DomainModel, DomainSpec, EnergyModel, ModelError,
    ModelWarning,
};
use serde::Serialize;
use std::collections::BTreeMap;

/// Name under which the host CPU is addressed as a compute target.
pub const HOST_TARGET: &str = "cpu";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Platform {
    clock: ClockConfig,
    domains: Vec<DomainSpec>,
    model: EnergyModel,
    #[serde(skip)]
    warnings: Vec<ModelWarning>,
    accelerators: BTreeMap<String, AcceleratorSpec>,
}

impl Platform {
    pub fn new(domains: Vec<DomainSpec>, model: EnergyModel, clock: ClockConfig) -> Result<Self, Vec<ModelError>> {
        let validated = validate_energy_model(&model, &domains)?;
        Ok(Self {
            clock,
            domains,
            model: validated.model,
            warnings: validated.warnings,
            accelerators: BTreeMap::new(),
        })
    }

    /// Platform whose domains are exactly those listed by `model`.
    pub fn from_model(model: EnergyModel, clock: ClockConfig) -> Result<Self, Vec<ModelError>> {
        let domains = model.platform();
        Self::new(domains, model, clock)
    }

    pub fn clock(&self) -> ClockConfig {
        self.clock
    }

    pub fn domains(&self) -> &[DomainSpec] {
        &self.domains
    }

    pub fn model(&self) -> &EnergyModel {
        &self.model
    }

    pub fn warnings(&self) -> &[ModelWarning] {
        &self.warnings
    }

    pub fn accelerators(&self) -> &BTreeMap<String, AcceleratorSpec> {
        &self.accelerators
    }

    pub fn accelerator(&self, name: &str) -> Option<&AcceleratorSpec> {
        self.accelerators.get(name)
    }

    /// `cpu` or a registered accelerator.
    pub fn is_target(&self, name: &str) -> bool {
        name == HOST_TARGET || self.accelerators.contains_key(name)
    }

    /// Domain id owned by accelerator `name`, for RTL-stage accelerators.
    pub fn accel_domain(&self, name: &str) -> Option<String> {
        self.accelerators.get(name)?.power_domain().map(|d| d.id)
    }

    /// Whether `domain` belongs to some accelerator rather than the host.
    pub fn is_accel_domain(&self, domain: &str) -> bool {
        self.accelerators
            .values()
            .filter_map(AcceleratorSpec::power_domain)
            .any(|d| d.id == domain)
    }

    pub fn domain_kind(&self, domain: &str) -> Option<DomainKind> {
        self.domains.iter().find(|d| d.id == domain).map(|d| d.kind)
    }

    pub(crate) fn insert_accelerator(&mut self, spec: AcceleratorSpec) -> Result<(), AccelError> {
        if spec.name == HOST_TARGET || self.accelerators.contains_key(&spec.name) {
            return Err(AccelError::DuplicateName(spec.name));
        }
        spec.validate()?;
        if let (Stage::RtlStage, Some(power)) = (spec.stage, &spec.power) {
            let accel_model = EnergyModel {
                technology: spec.technology.clone().unwrap_or_else(|| spec.name.clone()),
                voltage_v: self.model.voltage_v,
                ref_freq_hz: self.model.ref_freq_hz,
                notes: None,
                domains: [(
                    power.id.clone(),
                    DomainModel {
                        kind: DomainKind::Logic,
                        power: power.power,
                    },
                )]
                .into_iter()
                .collect(),
            };
            let merged = merge_models(&self.model, &accel_model)?;
            let mut domains = self.domains.clone();
            domains.push(power.domain());
            let validated = validate_energy_model(&merged, &domains)
                .map_err(|errs| AccelError::Model(errs.into_iter().next().expect("non-empty error list")))?;
            self.model = validated.model;
            self.warnings = validated.warnings;
            self.domains = domains;
        }
        self.accelerators.insert(spec.name.clone(), spec);
        Ok(())
    }
}
