/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_network_free: (a: number, b: number) => void;
export const __wbg_trace_free: (a: number, b: number) => void;
export const em_trace: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const network: (a: number, b: number, c: number) => [number, number, number];
export const network_consensus_rho: (a: number) => number;
export const network_degrees: (a: number) => [number, number];
export const network_edges: (a: number) => [number, number];
export const network_positions: (a: number) => [number, number];
export const sanger_rho_sweep: (a: number, b: number, c: number, d: number, e: number) => [number, number, number, number];
export const trace_diverged: (a: number) => number;
export const trace_errors: (a: number) => [number, number];
export const trace_iterations: (a: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
