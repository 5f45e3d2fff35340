/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const decode_signers: (a: bigint, b: number) => [number, number, number, number];
export const encode_signers: (a: number, b: number, c: number) => [number, number, number, number];
export const proof_size_sweep: (a: number, b: number) => [number, number, number, number];
export const run_scenario: (a: number, b: number) => [number, number, number, number];
export const template_json: (a: number, b: number) => [number, number, number, number];
export const template_names: () => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __wbindgen_start: () => void;
