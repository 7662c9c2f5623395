/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_rdsscene_free: (a: number, b: number) => void;
export const cost_curve: (a: number, b: number, c: number, d: number, e: number) => [number, number];
export const rdsscene_disparity_rgba: (a: number) => [number, number];
export const rdsscene_height: (a: number) => number;
export const rdsscene_left_rgba: (a: number) => [number, number];
export const rdsscene_matched_residual: (a: number, b: number) => number;
export const rdsscene_new: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number];
export const rdsscene_residual_rgba: (a: number, b: number) => [number, number];
export const rdsscene_right_rgba: (a: number) => [number, number];
export const rdsscene_width: (a: number) => number;
export const soft_argmin: (a: number, b: number) => [number, number, number];
export const soft_argmin_weights: (a: number, b: number) => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_start: () => void;
