pub mod model;
pub mod quad;
pub mod waveform;
pub mod timetag;
pub mod mcsim;
pub mod analysis;
pub mod calibrate;
pub mod reproduce;
pub mod cli;
