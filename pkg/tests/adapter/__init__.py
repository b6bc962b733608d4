"""Adapter layer tests"""
