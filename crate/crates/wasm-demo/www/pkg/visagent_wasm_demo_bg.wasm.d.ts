/* tslint:disable */
/* eslint-disable */
export const memory: WebAssembly.Memory;
export const __wbg_mapview_free: (a: number, b: number) => void;
export const apply_tool: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const mapview_lat: (a: number) => number;
export const mapview_lon: (a: number) => number;
export const mapview_new: (a: number, b: number, c: number, d: number, e: number, f: bigint) => [number, number, number];
export const mapview_pan: (a: number, b: number, c: number, d: number) => [number, number];
export const mapview_render: (a: number) => [number, number, number, number];
export const mapview_zoom: (a: number) => number;
export const mapview_zoom_in: (a: number, b: number) => [number, number];
export const mapview_zoom_out: (a: number, b: number) => [number, number];
export const retrieve_2d: (a: number, b: number, c: number, d: number, e: number, f: number) => [number, number, number, number];
export const sample_image: (a: number, b: number, c: number, d: number, e: bigint) => [number, number, number, number];
export const tool_list: () => [number, number];
export const __wbindgen_externrefs: WebAssembly.Table;
export const __wbindgen_malloc: (a: number, b: number) => number;
export const __wbindgen_realloc: (a: number, b: number, c: number, d: number) => number;
export const __externref_table_dealloc: (a: number) => void;
export const __wbindgen_free: (a: number, b: number, c: number) => void;
export const __externref_drop_slice: (a: number, b: number) => void;
export const __wbindgen_start: () => void;
