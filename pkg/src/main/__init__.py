"""Presentation layer - CLI interfaces"""
