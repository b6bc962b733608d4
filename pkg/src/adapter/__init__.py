"""Adapter layer - File formats and rendering"""
